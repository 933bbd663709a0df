//! Chain-of-custody verification over sanitised events.
//!
//! Given an item digest, the verifier fetches every event mentioning the item,
//! pairs each shipping event with the receiving event for the same hand-over,
//! and checks that the history starts at an origin (commissioning or the
//! assembly that produced the item). Assemblies are followed into their
//! input components when asked.
//!
//! A shipping event `S` and a receiving event `R` link when:
//!
//! * both mention the item
//! * their source lists share a digest with the same `type=` suffix, and so do their destination lists
//! * their transaction digests intersect, when both carry any
//! * `R` is not earlier than `S`
//!
//! Pairing is greedy: shipping events in time order each take the earliest
//! compatible receiving event, preferring one that shares a transaction digest.
//!
//! Party digests are salted per transaction, so consecutive hops can only be
//! compared when they share a transaction digest. Hops that cannot be compared
//! are counted as unverifiable rather than treated as breaks.

use std::collections::{BTreeMap, BTreeSet};
use std::convert::Infallible;

use serde::{Deserialize, Serialize};

use crate::event::EventType;
use crate::ni::{Digest, NiUri};
use crate::sanitiser::SanitisedEvent;
use crate::store::DiscoveryStore;

/// Anything that answers "which sanitised events publish this digest".
pub trait EventSource {
    type Error;

    fn events_by_digest(&self, d: &Digest) -> Result<Vec<SanitisedEvent>, Self::Error>;
}

impl EventSource for DiscoveryStore {
    type Error = Infallible;

    fn events_by_digest(&self, d: &Digest) -> Result<Vec<SanitisedEvent>, Infallible> {
        Ok(self.query_by_digest(d))
    }
}

impl<T: EventSource + ?Sized> EventSource for &T {
    type Error = T::Error;

    fn events_by_digest(&self, d: &Digest) -> Result<Vec<SanitisedEvent>, Self::Error> {
        (**self).events_by_digest(d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    Shipping,
    Receiving,
    Commissioning,
    Other,
}

/// Maps business-step URIs to the roles the verifier cares about.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepVocabulary {
    pub shipping: BTreeSet<String>,
    pub receiving: BTreeSet<String>,
    pub commissioning: BTreeSet<String>,
}

impl Default for StepVocabulary {
    fn default() -> Self {
        let both = |names: &[&str]| {
            names
                .iter()
                .flat_map(|n| [format!("urn:epcglobal:cbv:bizstep:{n}"), format!("https://ns.gs1.org/cbv/BizStep-{n}")])
                .collect()
        };
        Self {
            shipping: both(&["shipping", "departing"]),
            receiving: both(&["receiving", "accepting"]),
            commissioning: both(&["commissioning"]),
        }
    }
}

impl StepVocabulary {
    pub fn kind(&self, biz_step: &str) -> StepKind {
        if self.shipping.contains(biz_step) {
            StepKind::Shipping
        } else if self.receiving.contains(biz_step) {
            StepKind::Receiving
        } else if self.commissioning.contains(biz_step) {
            StepKind::Commissioning
        } else {
            StepKind::Other
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CustodyLink {
    pub ship_event_id: NiUri,
    pub receive_event_id: NiUri,
    pub item_digest: Digest,
    pub from_party_digest: Digest,
    pub to_party_digest: Digest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transaction_digest: Option<Digest>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Shipping,
    Receiving,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Unmatched {
    pub event_id: NiUri,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Matching {
    pub links: Vec<CustodyLink>,
    pub unmatched: Vec<Unmatched>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Continuity {
    /// Fewer than two links.
    NotApplicable,
    /// Every consecutive pair of links shares a transaction and the parties agree.
    Verified,
    /// At least one consecutive pair uses different salts and cannot be compared.
    Unverifiable,
}

/// Which completeness conditions held.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conditions {
    pub origin_event: bool,
    pub all_matched: bool,
    pub continuity: Continuity,
    pub verified_hops: usize,
    pub unverifiable_hops: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Gap {
    UnmatchedShipping { event_id: NiUri },
    UnmatchedReceiving { event_id: NiUri },
    MissingOrigin { first_event_id: NiUri },
    /// Link `index` hands the item to a party other than the one shipping in link `index + 1`.
    Discontinuity { index: usize, receive_event_id: NiUri, next_ship_event_id: NiUri },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ChainVerdict {
    Complete {
        item: Digest,
        links: Vec<CustodyLink>,
        origin_event_id: NiUri,
        terminal_event_id: NiUri,
        conditions: Conditions,
        #[serde(default)]
        component_verdicts: BTreeMap<Digest, ChainVerdict>,
    },
    Broken {
        item: Digest,
        links: Vec<CustodyLink>,
        gap: Gap,
        #[serde(default)]
        component_verdicts: BTreeMap<Digest, ChainVerdict>,
    },
    Unknown {
        item: Digest,
        reason: String,
    },
}

impl ChainVerdict {
    pub fn is_complete(&self) -> bool {
        matches!(self, ChainVerdict::Complete { .. })
    }

    pub fn is_broken(&self) -> bool {
        matches!(self, ChainVerdict::Broken { .. })
    }

    pub fn is_unknown(&self) -> bool {
        matches!(self, ChainVerdict::Unknown { .. })
    }

    pub fn component_verdicts(&self) -> Option<&BTreeMap<Digest, ChainVerdict>> {
        match self {
            ChainVerdict::Complete { component_verdicts, .. } | ChainVerdict::Broken { component_verdicts, .. } => {
                Some(component_verdicts)
            }
            ChainVerdict::Unknown { .. } => None,
        }
    }

    /// Complete here and in every component, recursively.
    pub fn is_complete_throughout(&self) -> bool {
        self.is_complete()
            && self
                .component_verdicts()
                .is_some_and(|m| m.values().all(ChainVerdict::is_complete_throughout))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("verdicts always serialise")
    }
}

/// Events listing `h` as an item (not as a party or transaction), in event-time order.
pub fn fetch_history<S: EventSource>(h: &Digest, source: &S) -> Result<Vec<SanitisedEvent>, S::Error> {
    let mut events: Vec<SanitisedEvent> = source
        .events_by_digest(h)?
        .into_iter()
        .filter(|e| e.mentions_item(h))
        .collect();
    events.sort_by(|a, b| (&a.event_time, &a.event_id).cmp(&(&b.event_time, &b.event_id)));
    events.dedup_by(|a, b| a.event_id == b.event_id);
    Ok(events)
}

fn shared_typed(a: &[NiUri], b: &[NiUri]) -> Option<Digest> {
    let mut shared: Vec<&NiUri> = a.iter().filter(|u| b.contains(u)).collect();
    // prefer the possessing party when an event lists several roles
    shared.sort_by_key(|u| {
        (
            !u.type_suffix().is_some_and(|t| t.ends_with("possessing_party")),
            *u.digest(),
        )
    });
    shared.first().map(|u| *u.digest())
}

fn shared_transaction(s: &SanitisedEvent, r: &SanitisedEvent) -> Option<Digest> {
    s.biz_transaction_list
        .iter()
        .map(NiUri::digest)
        .filter(|d| r.biz_transaction_list.iter().any(|u| u.digest() == *d))
        .min()
        .copied()
}

/// The link `s` and `r` would form, if they are compatible.
pub fn link_for(item: &Digest, s: &SanitisedEvent, r: &SanitisedEvent) -> Option<CustodyLink> {
    if !s.mentions_item(item) || !r.mentions_item(item) {
        return None;
    }
    if r.event_time.instant() < s.event_time.instant() {
        return None;
    }
    let from = shared_typed(&s.source_list, &r.source_list)?;
    let to = shared_typed(&s.destination_list, &r.destination_list)?;
    let both_have_tx = !s.biz_transaction_list.is_empty() && !r.biz_transaction_list.is_empty();
    let tx = shared_transaction(s, r);
    if both_have_tx && tx.is_none() {
        return None;
    }
    Some(CustodyLink {
        ship_event_id: s.event_id.clone(),
        receive_event_id: r.event_id.clone(),
        item_digest: *item,
        from_party_digest: from,
        to_party_digest: to,
        transaction_digest: tx,
    })
}

/// Pairs shipping and receiving events for `item`. `events` need not be sorted.
pub fn match_pairs(item: &Digest, events: &[SanitisedEvent], vocab: &StepVocabulary) -> Matching {
    let mut ordered: Vec<&SanitisedEvent> = events.iter().collect();
    ordered.sort_by(|a, b| (&a.event_time, &a.event_id).cmp(&(&b.event_time, &b.event_id)));
    let shipping: Vec<&SanitisedEvent> = ordered
        .iter()
        .copied()
        .filter(|e| vocab.kind(&e.biz_step) == StepKind::Shipping)
        .collect();
    let receiving: Vec<&SanitisedEvent> = ordered
        .iter()
        .copied()
        .filter(|e| vocab.kind(&e.biz_step) == StepKind::Receiving)
        .collect();

    let mut used = vec![false; receiving.len()];
    let mut out = Matching::default();
    for s in shipping {
        let best = receiving
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .filter_map(|(i, r)| link_for(item, s, r).map(|l| (i, r, l)))
            .min_by(|(_, a, la), (_, b, lb)| {
                let key = |r: &SanitisedEvent, l: &CustodyLink| (l.transaction_digest.is_none(), r.event_time.clone(), r.event_id.clone());
                key(a, la).cmp(&key(b, lb))
            });
        match best {
            Some((i, _, link)) => {
                used[i] = true;
                out.links.push(link);
            }
            None => out.unmatched.push(Unmatched {
                event_id: s.event_id.clone(),
                direction: Direction::Shipping,
            }),
        }
    }
    for (r, used) in receiving.iter().zip(used) {
        if !used {
            out.unmatched.push(Unmatched {
                event_id: r.event_id.clone(),
                direction: Direction::Receiving,
            });
        }
    }
    out
}

fn is_origin(e: &SanitisedEvent, item: &Digest, vocab: &StepVocabulary) -> bool {
    vocab.kind(&e.biz_step) == StepKind::Commissioning
        || (e.event_type == EventType::AssemblyEvent && e.output_epc_list.iter().any(|u| u.digest() == item))
}

fn continuity(links: &[CustodyLink]) -> Result<Conditions, Gap> {
    let mut verified = 0;
    let mut unverifiable = 0;
    for (i, pair) in links.windows(2).enumerate() {
        let (a, b) = (&pair[0], &pair[1]);
        if a.transaction_digest == b.transaction_digest {
            if a.to_party_digest != b.from_party_digest {
                return Err(Gap::Discontinuity {
                    index: i,
                    receive_event_id: a.receive_event_id.clone(),
                    next_ship_event_id: b.ship_event_id.clone(),
                });
            }
            verified += 1;
        } else {
            unverifiable += 1;
        }
    }
    let continuity = match (links.len(), unverifiable) {
        (0 | 1, _) => Continuity::NotApplicable,
        (_, 0) => Continuity::Verified,
        _ => Continuity::Unverifiable,
    };
    Ok(Conditions {
        origin_event: true,
        all_matched: true,
        continuity,
        verified_hops: verified,
        unverifiable_hops: unverifiable,
    })
}

/// Verifies the custody chain of `item` with the default step vocabulary.
pub fn verify_chain<S: EventSource>(item: &Digest, source: &S, recurse: bool) -> Result<ChainVerdict, S::Error> {
    verify_chain_with(item, source, recurse, &StepVocabulary::default())
}

pub fn verify_chain_with<S: EventSource>(
    item: &Digest,
    source: &S,
    recurse: bool,
    vocab: &StepVocabulary,
) -> Result<ChainVerdict, S::Error> {
    let mut path = BTreeSet::new();
    verify_inner(item, source, recurse, vocab, &mut path)
}

fn verify_inner<S: EventSource>(
    item: &Digest,
    source: &S,
    recurse: bool,
    vocab: &StepVocabulary,
    path: &mut BTreeSet<Digest>,
) -> Result<ChainVerdict, S::Error> {
    let history = fetch_history(item, source)?;
    let (Some(first), Some(last)) = (history.first(), history.last()) else {
        return Ok(ChainVerdict::Unknown {
            item: *item,
            reason: "no events found".into(),
        });
    };

    let mut component_verdicts = BTreeMap::new();
    if recurse {
        path.insert(*item);
        let inputs: BTreeSet<Digest> = history
            .iter()
            .filter(|e| e.event_type == EventType::AssemblyEvent && e.output_epc_list.iter().any(|u| u.digest() == item))
            .flat_map(|e| e.input_epc_list.iter().map(|u| *u.digest()))
            .collect();
        for input in inputs {
            let verdict = if path.contains(&input) {
                ChainVerdict::Unknown {
                    item: input,
                    reason: "assembly cycle".into(),
                }
            } else {
                verify_inner(&input, source, recurse, vocab, path)?
            };
            component_verdicts.insert(input, verdict);
        }
        path.remove(item);
    }

    let Matching { links, unmatched } = match_pairs(item, &history, vocab);
    let broken = |gap| ChainVerdict::Broken {
        item: *item,
        links: links.clone(),
        gap,
        component_verdicts: component_verdicts.clone(),
    };
    if let Some(u) = unmatched.first() {
        return Ok(broken(match u.direction {
            Direction::Shipping => Gap::UnmatchedShipping {
                event_id: u.event_id.clone(),
            },
            Direction::Receiving => Gap::UnmatchedReceiving {
                event_id: u.event_id.clone(),
            },
        }));
    }
    if !is_origin(first, item, vocab) {
        return Ok(broken(Gap::MissingOrigin {
            first_event_id: first.event_id.clone(),
        }));
    }
    let conditions = match continuity(&links) {
        Ok(c) => c,
        Err(gap) => return Ok(broken(gap)),
    };
    Ok(ChainVerdict::Complete {
        item: *item,
        origin_event_id: first.event_id.clone(),
        terminal_event_id: last.event_id.clone(),
        links,
        conditions,
        component_verdicts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ni::ni_hash;

    const SHIPPING: &[u8] = include_bytes!("../fixtures/shipping_event.sanitised.json");
    const RECEIVING: &[u8] = include_bytes!("../fixtures/receiving_event.sanitised.json");

    fn pair() -> (SanitisedEvent, SanitisedEvent) {
        (
            SanitisedEvent::from_json(SHIPPING).unwrap(),
            SanitisedEvent::from_json(RECEIVING).unwrap(),
        )
    }

    fn sscc() -> Digest {
        Digest::parse_lowercase("e5284a01b67b7756c0f51d10e7c74c6f277fea0e1f08ebe8f27fae25b04e695b").unwrap()
    }

    fn store(events: &[SanitisedEvent]) -> DiscoveryStore {
        let s = DiscoveryStore::new();
        for e in events {
            s.put(e.clone()).unwrap();
        }
        s
    }

    fn hex(s: &str) -> Digest {
        s.parse().unwrap()
    }

    #[test]
    fn reference_pair_forms_one_link() {
        let (s, r) = pair();
        let m = match_pairs(&sscc(), &[r.clone(), s.clone()], &StepVocabulary::default());
        assert!(m.unmatched.is_empty());
        assert_eq!(
            m.links,
            vec![CustodyLink {
                ship_event_id: s.event_id,
                receive_event_id: r.event_id,
                item_digest: sscc(),
                from_party_digest: hex("63ba4ead93f79fb67e68a277e85247988fb410ac0c2f00b87f802d75031b52f9"),
                to_party_digest: hex("8d2cdc63d2e3d173174c9167ac4a857dfc0a0abba7cee54ef0e4b9a21156021b"),
                transaction_digest: Some(hex("2428dd1fddb2811d950320b732dda8f4be7312e02be14c2dfb8da9969085da38")),
            }]
        );
    }

    #[test]
    fn history_of_reference_pair() {
        let (s, r) = pair();
        let st = store(&[r.clone(), s.clone()]);
        assert_eq!(fetch_history(&sscc(), &st).unwrap(), vec![s, r]);
        assert!(fetch_history(&Digest::of(b"unseen"), &st).unwrap().is_empty());
        // a party digest is not an item
        let party = hex("63ba4ead93f79fb67e68a277e85247988fb410ac0c2f00b87f802d75031b52f9");
        assert!(fetch_history(&party, &st).unwrap().is_empty());
    }

    #[test]
    fn lone_shipping_is_unmatched() {
        let (s, _) = pair();
        let m = match_pairs(&sscc(), &[s.clone()], &StepVocabulary::default());
        assert!(m.links.is_empty());
        assert_eq!(
            m.unmatched,
            vec![Unmatched {
                event_id: s.event_id,
                direction: Direction::Shipping
            }]
        );
    }

    #[test]
    fn receive_before_ship_does_not_link() {
        let (s, mut r) = pair();
        r.event_time = "2021-04-27T00:00:00.000+02:00".parse().unwrap();
        assert!(link_for(&sscc(), &s, &r).is_none());
    }

    #[test]
    fn type_suffix_must_agree() {
        let (s, mut r) = pair();
        let d = *r.source_list[0].digest();
        r.source_list[0] = NiUri::new(d).with_type("urn:epcglobal:cbv:sdt:owning_party");
        assert!(link_for(&sscc(), &s, &r).is_none());
    }

    #[test]
    fn disjoint_transactions_do_not_link() {
        let (s, mut r) = pair();
        r.biz_transaction_list = vec![ni_hash("urn:epc:id:gdti:0614141.00002.PO-999").unwrap()];
        assert!(link_for(&sscc(), &s, &r).is_none());
        r.biz_transaction_list.clear();
        assert!(link_for(&sscc(), &s, &r).unwrap().transaction_digest.is_none());
    }

    #[test]
    fn reference_pair_without_origin_is_broken() {
        let (s, r) = pair();
        let v = verify_chain(&sscc(), &store(&[s.clone(), r]), true).unwrap();
        match v {
            ChainVerdict::Broken { gap, links, .. } => {
                assert_eq!(gap, Gap::MissingOrigin { first_event_id: s.event_id });
                assert_eq!(links.len(), 1);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_digest() {
        let v = verify_chain(&Digest::of(b"nothing"), &DiscoveryStore::new(), true).unwrap();
        assert!(v.is_unknown());
        let json = serde_json::to_value(&v).unwrap();
        assert_eq!(json["status"], "unknown");
    }

    #[test]
    fn vocabulary_covers_both_spellings() {
        let v = StepVocabulary::default();
        assert_eq!(v.kind("urn:epcglobal:cbv:bizstep:shipping"), StepKind::Shipping);
        assert_eq!(v.kind("https://ns.gs1.org/cbv/BizStep-departing"), StepKind::Shipping);
        assert_eq!(v.kind("https://ns.gs1.org/cbv/BizStep-accepting"), StepKind::Receiving);
        assert_eq!(v.kind("urn:epcglobal:cbv:bizstep:commissioning"), StepKind::Commissioning);
        assert_eq!(v.kind("urn:epcglobal:cbv:bizstep:packing"), StepKind::Other);
    }

    #[test]
    fn verdict_json_round_trip() {
        let (s, r) = pair();
        let v = verify_chain(&sscc(), &store(&[s, r]), false).unwrap();
        let back: ChainVerdict = serde_json::from_str(&v.to_json_pretty()).unwrap();
        assert_eq!(back, v);
    }
}
