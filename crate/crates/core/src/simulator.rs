//! Deterministic event generator for a small electronics supply network.
//!
//! Suppliers commission components and ship them to the manufacturer, who
//! assembles one product from them and ships it to a retailer. Optionally the
//! product comes back through a reseller. Every shipment has its own purchase
//! order, shared by its shipping and receiving events.

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::Path;

use chrono::{DateTime, Duration, FixedOffset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::event::{serialize_ndjson, serialize_xml, Action, Event, EventTime, EventType, TypedValue};

const CBV: &str = "urn:epcglobal:cbv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Supplier,
    Manufacturer,
    Retailer,
    Reseller,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Actor {
    pub name: String,
    pub role: Role,
    /// GS1 company prefix, 7 digits. Party, location and item identifiers are built from it.
    pub company_prefix: String,
}

impl Actor {
    pub fn new(name: &str, role: Role, company_prefix: &str) -> Self {
        Self {
            name: name.into(),
            role,
            company_prefix: company_prefix.into(),
        }
    }

    pub fn party(&self) -> String {
        format!("urn:epc:id:pgln:{}.00000", self.company_prefix)
    }

    fn location(&self) -> String {
        format!("urn:epc:id:sgln:{}.00001.0", self.company_prefix)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub seed: u64,
    pub actors: Vec<Actor>,
    pub products: usize,
    pub components_per_product: usize,
    pub include_return_leg: bool,
}

impl NetworkSpec {
    /// Suppliers A and B, Manufacturer C, Retailers D and E, Reseller F.
    pub fn electronics(seed: u64) -> Self {
        Self {
            seed,
            actors: vec![
                Actor::new("Supplier A", Role::Supplier, "4023333"),
                Actor::new("Supplier B", Role::Supplier, "4012345"),
                Actor::new("Manufacturer C", Role::Manufacturer, "0614141"),
                Actor::new("Retailer D", Role::Retailer, "0012345"),
                Actor::new("Retailer E", Role::Retailer, "0098765"),
                Actor::new("Reseller F", Role::Reseller, "0077777"),
            ],
            products: 1,
            components_per_product: 2,
            include_return_leg: true,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let invalid = |m: &str| Err(SimError::InvalidSpec(m.into()));
        let prefixes: BTreeSet<&str> = self.actors.iter().map(|a| a.company_prefix.as_str()).collect();
        if prefixes.len() != self.actors.len() {
            return invalid("company prefixes must be unique");
        }
        if let Some(a) = self
            .actors
            .iter()
            .find(|a| a.company_prefix.len() != 7 || !a.company_prefix.bytes().all(|b| b.is_ascii_digit()))
        {
            return Err(SimError::InvalidSpec(format!(
                "{}: company prefix must be 7 digits",
                a.name
            )));
        }
        if self.products == 0 {
            return Ok(());
        }
        if self.components_per_product == 0 {
            return invalid("a product needs at least one component");
        }
        for (role, needed) in [
            (Role::Supplier, true),
            (Role::Manufacturer, true),
            (Role::Retailer, true),
            (Role::Reseller, self.include_return_leg),
        ] {
            if needed && !self.actors.iter().any(|a| a.role == role) {
                return Err(SimError::InvalidSpec(format!("no actor with role {role:?}")));
            }
        }
        Ok(())
    }

    fn with_role(&self, role: Role) -> Vec<&Actor> {
        self.actors.iter().filter(|a| a.role == role).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("event {index} is not a {kind:?} target")]
    NoTarget { kind: FaultKind, index: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductRecord {
    pub epc: String,
    pub components: Vec<String>,
}

/// Ground truth written next to a generated dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub event_count: usize,
    pub products: Vec<ProductRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Simulation {
    pub events: Vec<Event>,
    pub manifest: Manifest,
}

impl Simulation {
    /// Writes `events.xml`, `events.ndjson` and `manifest.json` into `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> io::Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join("events.xml"), serialize_xml(&self.events))?;
        fs::write(dir.join("events.ndjson"), serialize_ndjson(&self.events))?;
        let manifest = serde_json::to_string_pretty(&self.manifest).expect("manifest serialises");
        fs::write(dir.join("manifest.json"), manifest + "\n")
    }
}

struct Generator {
    rng: ChaCha8Rng,
    clock: DateTime<FixedOffset>,
    orders: usize,
    events: Vec<Event>,
}

impl Generator {
    fn tick(&mut self) -> EventTime {
        let minutes = self.rng.gen_range(30..=48 * 60);
        self.clock += Duration::minutes(minutes);
        EventTime::from_instant(self.clock)
    }

    fn serial(&mut self) -> u64 {
        self.rng.gen_range(1_000_000_000..10_000_000_000)
    }

    fn sgtin(&mut self, maker: &Actor, item_ref: &str) -> String {
        let serial = self.serial();
        format!("urn:epc:id:sgtin:{}.{item_ref}.{serial}", maker.company_prefix)
    }

    fn commission(&mut self, maker: &Actor, epc: &str) {
        let mut e = Event::new(
            EventType::ObjectEvent,
            self.tick(),
            Action::Add,
            format!("{CBV}:bizstep:commissioning"),
        );
        e.epc_list.push(epc.to_string());
        e.disposition = Some(format!("{CBV}:disp:active"));
        e.read_point = Some(maker.location());
        self.events.push(e);
    }

    fn hand_over(&mut self, from: &Actor, to: &Actor, epc: &str) {
        self.orders += 1;
        let po = format!(
            "urn:epc:id:gdti:{}.00002.PO-{}-{:08x}",
            to.company_prefix,
            self.orders,
            self.rng.gen::<u32>()
        );
        let party = format!("{CBV}:sdt:possessing_party");
        for (step, disposition, at) in [("shipping", "in_transit", from), ("receiving", "in_progress", to)] {
            let mut e = Event::new(
                EventType::ObjectEvent,
                self.tick(),
                Action::Observe,
                format!("{CBV}:bizstep:{step}"),
            );
            e.epc_list.push(epc.to_string());
            e.disposition = Some(format!("{CBV}:disp:{disposition}"));
            e.read_point = Some(at.location());
            e.biz_transactions.push(TypedValue::new(format!("{CBV}:btt:po"), po.clone()));
            e.sources.push(TypedValue::new(party.clone(), from.party()));
            e.destinations.push(TypedValue::new(party.clone(), to.party()));
            self.events.push(e);
        }
    }

    fn assemble(&mut self, maker: &Actor, inputs: &[String], output: &str) {
        let mut e = Event::new(
            EventType::AssemblyEvent,
            self.tick(),
            Action::Add,
            format!("{CBV}:bizstep:assembling"),
        );
        e.input_epcs = inputs.to_vec();
        e.output_epcs.push(output.to_string());
        e.disposition = Some(format!("{CBV}:disp:active"));
        e.read_point = Some(maker.location());
        self.events.push(e);
    }
}

/// Generates the full simulation. The same spec always yields the same events.
pub fn simulate(spec: &NetworkSpec) -> Result<Simulation, SimError> {
    spec.validate()?;
    let start = DateTime::parse_from_rfc3339("2021-04-28T08:00:00+02:00").expect("valid constant");
    let mut g = Generator {
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        clock: start,
        orders: 0,
        events: Vec::new(),
    };
    let mut products = Vec::with_capacity(spec.products);
    if spec.products > 0 {
        let suppliers = spec.with_role(Role::Supplier);
        let manufacturer = spec.with_role(Role::Manufacturer)[0];
        let retailers = spec.with_role(Role::Retailer);
        let reseller = spec.with_role(Role::Reseller).first().copied();

        for p in 0..spec.products {
            let mut components = Vec::with_capacity(spec.components_per_product);
            for c in 0..spec.components_per_product {
                let supplier = suppliers[(p * spec.components_per_product + c) % suppliers.len()];
                let epc = g.sgtin(supplier, &format!("0{:05}", 100 + c));
                g.commission(supplier, &epc);
                g.hand_over(supplier, manufacturer, &epc);
                components.push(epc);
            }
            let product = g.sgtin(manufacturer, "012345");
            g.assemble(manufacturer, &components, &product);
            let retailer = retailers[g.rng.gen_range(0..retailers.len())];
            g.hand_over(manufacturer, retailer, &product);
            if spec.include_return_leg {
                let reseller = reseller.expect("checked by validate");
                g.hand_over(retailer, reseller, &product);
            }
            products.push(ProductRecord {
                epc: product,
                components,
            });
        }
    }
    let events = g.events;
    Ok(Simulation {
        manifest: Manifest {
            seed: spec.seed,
            event_count: events.len(),
            products,
        },
        events,
    })
}

pub fn generate(spec: &NetworkSpec) -> Result<Vec<Event>, SimError> {
    simulate(spec).map(|s| s.events)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FaultKind {
    DropShip,
    DropReceive,
    TamperEpc,
}

fn is_target(e: &Event, kind: FaultKind) -> bool {
    match kind {
        FaultKind::DropShip => e.biz_step == format!("{CBV}:bizstep:shipping"),
        FaultKind::DropReceive => e.biz_step == format!("{CBV}:bizstep:receiving"),
        FaultKind::TamperEpc => e.epc_list.first().is_some_and(|epc| epc.ends_with(|c: char| c.is_ascii_digit())),
    }
}

/// Indices `inject_fault` accepts for `kind`.
pub fn fault_targets(events: &[Event], kind: FaultKind) -> Vec<usize> {
    events
        .iter()
        .enumerate()
        .filter(|(_, e)| is_target(e, kind))
        .map(|(i, _)| i)
        .collect()
}

/// Removes the event at `index` (drop faults) or changes the last digit of its first EPC.
pub fn inject_fault(events: &[Event], kind: FaultKind, index: usize) -> Result<Vec<Event>, SimError> {
    if !events.get(index).is_some_and(|e| is_target(e, kind)) {
        return Err(SimError::NoTarget { kind, index });
    }
    let mut out = events.to_vec();
    match kind {
        FaultKind::DropShip | FaultKind::DropReceive => {
            out.remove(index);
        }
        FaultKind::TamperEpc => {
            let epc = &mut out[index].epc_list[0];
            let last = epc.pop().and_then(|c| c.to_digit(10)).expect("checked by is_target");
            epc.push(char::from_digit((last + 1) % 10, 10).expect("single digit"));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::validate;

    #[test]
    fn reference_network_event_count() {
        // 2 components x (commission, ship, receive) + assembly + 2 hops x (ship, receive)
        let events = generate(&NetworkSpec::electronics(7)).unwrap();
        assert_eq!(events.len(), 2 * 3 + 1 + 2 + 2);
        let mut spec = NetworkSpec::electronics(7);
        spec.include_return_leg = false;
        assert_eq!(generate(&spec).unwrap().len(), 9);
    }

    #[test]
    fn zero_products_is_empty() {
        let mut spec = NetworkSpec::electronics(1);
        spec.products = 0;
        let sim = simulate(&spec).unwrap();
        assert!(sim.events.is_empty());
        assert_eq!(sim.manifest.event_count, 0);
    }

    #[test]
    fn events_are_valid() {
        let mut spec = NetworkSpec::electronics(3);
        spec.products = 4;
        spec.components_per_product = 3;
        for e in generate(&spec).unwrap() {
            let report = validate(&e);
            assert!(report.is_valid(), "{report}");
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate(&NetworkSpec::electronics(42)).unwrap();
        let b = generate(&NetworkSpec::electronics(42)).unwrap();
        assert_eq!(serialize_xml(&a), serialize_xml(&b));
        assert_eq!(serialize_ndjson(&a), serialize_ndjson(&b));
        let c = simulate(&NetworkSpec::electronics(43)).unwrap();
        let a = simulate(&NetworkSpec::electronics(42)).unwrap();
        assert_ne!(a.manifest.products[0].epc, c.manifest.products[0].epc);
    }

    #[test]
    fn lifecycles_are_time_ordered() {
        let sim = simulate(&NetworkSpec::electronics(9)).unwrap();
        let p = &sim.manifest.products[0];
        for epc in p.components.iter().chain([&p.epc]) {
            let times: Vec<_> = sim
                .events
                .iter()
                .filter(|e| e.all_epcs().any(|x| x == epc))
                .map(|e| e.event_time.instant())
                .collect();
            assert!(times.len() >= 3);
            assert!(times.windows(2).all(|w| w[0] < w[1]), "{epc}");
        }
    }

    #[test]
    fn ship_receive_pairs_share_one_order() {
        let events = generate(&NetworkSpec::electronics(5)).unwrap();
        let ships = fault_targets(&events, FaultKind::DropShip);
        let receives = fault_targets(&events, FaultKind::DropReceive);
        assert_eq!(ships.len(), 4);
        assert_eq!(receives.len(), 4);
        let mut orders = BTreeSet::new();
        for (s, r) in ships.into_iter().zip(receives) {
            assert_eq!(s + 1, r);
            assert_eq!(events[s].biz_transactions, events[r].biz_transactions);
            assert_eq!(events[s].biz_transactions.len(), 1);
            assert!(orders.insert(events[s].biz_transactions[0].value.clone()));
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = NetworkSpec::electronics(1);
        spec.actors.retain(|a| a.role != Role::Reseller);
        assert!(generate(&spec).is_err());
        spec.include_return_leg = false;
        assert!(generate(&spec).is_ok());

        let mut spec = NetworkSpec::electronics(1);
        spec.actors[1].company_prefix = spec.actors[0].company_prefix.clone();
        assert!(generate(&spec).is_err());

        let mut spec = NetworkSpec::electronics(1);
        spec.components_per_product = 0;
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn drop_faults() {
        let events = generate(&NetworkSpec::electronics(5)).unwrap();
        let last_receive = *fault_targets(&events, FaultKind::DropReceive).last().unwrap();
        let fewer = inject_fault(&events, FaultKind::DropReceive, last_receive).unwrap();
        assert_eq!(fewer.len(), 10);
        assert!(!fewer.contains(&events[last_receive]));
        // index 0 is a commissioning event
        assert!(inject_fault(&events, FaultKind::DropShip, 0).is_err());
        assert!(inject_fault(&events, FaultKind::DropShip, 99).is_err());
    }

    #[test]
    fn tamper_changes_one_digit() {
        let events = generate(&NetworkSpec::electronics(5)).unwrap();
        let i = fault_targets(&events, FaultKind::DropReceive)[0];
        let tampered = inject_fault(&events, FaultKind::TamperEpc, i).unwrap();
        let (a, b) = (&events[i].epc_list[0], &tampered[i].epc_list[0]);
        assert_ne!(a, b);
        assert_eq!(a.len(), b.len());
        assert_eq!(a[..a.len() - 1], b[..b.len() - 1]);
        assert_eq!(tampered.len(), events.len());
    }

    #[test]
    fn writes_dataset_files() {
        let dir = tempfile::tempdir().unwrap();
        let sim = simulate(&NetworkSpec::electronics(11)).unwrap();
        sim.write_to(dir.path()).unwrap();
        let xml = fs::read(dir.path().join("events.xml")).unwrap();
        assert_eq!(crate::event::parse_event_xml(&xml).unwrap(), sim.events);
        let ndjson = fs::read_to_string(dir.path().join("events.ndjson")).unwrap();
        assert_eq!(crate::event::parse_event_ndjson(&ndjson).unwrap(), sim.events);
        let manifest: Manifest =
            serde_json::from_slice(&fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest, sim.manifest);
    }
}
