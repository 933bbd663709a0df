use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use ed25519_dalek::{Signature, Signer, SigningKey, VerifyingKey};
use serde_json::Value;

use super::AccessRequest;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuthDecision {
    Granted,
    Denied,
}

/// The owner's rule for answering requests.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AuthPolicy {
    AcceptAll,
    DenyAll,
    /// Ed25519 signature over [`AccessRequest::canonical_bytes`] by one of these keys.
    SignatureAllowList(Vec<VerifyingKey>),
}

/// Decides whether an owner should answer `r`. Anything that does not parse is a denial.
///
/// Under [`AuthPolicy::SignatureAllowList`] the request needs `auth.signature`
/// (base64, 64 bytes). If `auth.public_key` (base64, 32 bytes) is present it
/// must be on the list and is the only key tried; otherwise every listed key is tried.
pub fn evaluate_auth(r: &AccessRequest, p: &AuthPolicy) -> AuthDecision {
    match p {
        AuthPolicy::AcceptAll => AuthDecision::Granted,
        AuthPolicy::DenyAll => AuthDecision::Denied,
        AuthPolicy::SignatureAllowList(keys) => {
            if signature_valid(r, keys) {
                AuthDecision::Granted
            } else {
                AuthDecision::Denied
            }
        }
    }
}

fn signature_valid(r: &AccessRequest, keys: &[VerifyingKey]) -> bool {
    let Some(auth) = &r.auth else { return false };
    let Some(signature) = auth.get("signature").and_then(decode::<64>).map(|b| Signature::from_bytes(&b)) else {
        return false;
    };
    let candidates: Vec<&VerifyingKey> = match auth.get("public_key") {
        None => keys.iter().collect(),
        Some(v) => match decode::<32>(v).and_then(|b| VerifyingKey::from_bytes(&b).ok()) {
            Some(claimed) => keys.iter().filter(|k| **k == claimed).collect(),
            None => return false,
        },
    };
    let message = r.canonical_bytes();
    candidates
        .into_iter()
        .any(|k| k.verify_strict(&message, &signature).is_ok())
}

fn decode<const N: usize>(v: &Value) -> Option<[u8; N]> {
    B64.decode(v.as_str()?).ok()?.try_into().ok()
}

/// Adds `auth.public_key` and `auth.signature` for `key`, keeping any other auth fields.
pub fn sign_request(r: &mut AccessRequest, key: &SigningKey) {
    let auth = r.auth.get_or_insert_with(Default::default);
    auth.remove("signature");
    auth.insert(
        "public_key".into(),
        Value::String(B64.encode(key.verifying_key().as_bytes())),
    );
    let signature = key.sign(&r.canonical_bytes());
    r.auth
        .as_mut()
        .expect("set above")
        .insert("signature".into(), Value::String(B64.encode(signature.to_bytes())));
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::OsRng;

    const FIXTURE: &[u8] = include_bytes!("../../fixtures/access_request.json");

    fn request() -> AccessRequest {
        AccessRequest::from_json(FIXTURE).unwrap()
    }

    fn key() -> SigningKey {
        SigningKey::generate(&mut OsRng)
    }

    #[test]
    fn fixed_policies() {
        assert_eq!(evaluate_auth(&request(), &AuthPolicy::AcceptAll), AuthDecision::Granted);
        assert_eq!(evaluate_auth(&request(), &AuthPolicy::DenyAll), AuthDecision::Denied);
    }

    #[test]
    fn bare_id_is_denied() {
        let policy = AuthPolicy::SignatureAllowList(vec![key().verifying_key()]);
        assert_eq!(evaluate_auth(&request(), &policy), AuthDecision::Denied);
    }

    #[test]
    fn allow_listed_signature_is_granted() {
        let k = key();
        let mut r = request();
        sign_request(&mut r, &k);
        assert_eq!(r.auth.as_ref().unwrap()["id"], "Sebastian");
        let policy = AuthPolicy::SignatureAllowList(vec![key().verifying_key(), k.verifying_key()]);
        assert_eq!(evaluate_auth(&r, &policy), AuthDecision::Granted);
    }

    #[test]
    fn key_off_the_list_is_denied() {
        let mut r = request();
        sign_request(&mut r, &key());
        let policy = AuthPolicy::SignatureAllowList(vec![key().verifying_key()]);
        assert_eq!(evaluate_auth(&r, &policy), AuthDecision::Denied);
    }

    #[test]
    fn signature_without_public_key_tries_every_key() {
        let k = key();
        let mut r = request();
        sign_request(&mut r, &k);
        // the public key is part of the signed bytes, so sign again without it
        let auth = r.auth.as_mut().unwrap();
        auth.remove("public_key");
        auth.remove("signature");
        let sig = k.sign(&r.canonical_bytes());
        r.auth
            .as_mut()
            .unwrap()
            .insert("signature".into(), Value::String(B64.encode(sig.to_bytes())));
        let policy = AuthPolicy::SignatureAllowList(vec![key().verifying_key(), k.verifying_key()]);
        assert_eq!(evaluate_auth(&r, &policy), AuthDecision::Granted);
    }

    #[test]
    fn any_payload_change_is_denied() {
        let k = key();
        let policy = AuthPolicy::SignatureAllowList(vec![k.verifying_key()]);
        let mut r = request();
        sign_request(&mut r, &k);

        let mut tampered = r.clone();
        tampered.recipient.endpoint.push('x');
        assert_eq!(evaluate_auth(&tampered, &policy), AuthDecision::Denied);

        let mut tampered = r.clone();
        tampered.valid_until = "2021-07-30 13:32:45".parse().unwrap();
        assert_eq!(evaluate_auth(&tampered, &policy), AuthDecision::Denied);

        // flip one byte of the serialised request
        let json = r.to_json();
        let flipped = json.replacen("dd85a8a2", "dd85a8a3", 1);
        let tampered = AccessRequest::from_json(flipped.as_bytes()).unwrap();
        assert_eq!(evaluate_auth(&tampered, &policy), AuthDecision::Denied);
    }

    #[test]
    fn malformed_credentials_are_denied() {
        let k = key();
        let policy = AuthPolicy::SignatureAllowList(vec![k.verifying_key()]);
        for (field, value) in [
            ("signature", Value::String("not base64!".into())),
            ("signature", Value::String(B64.encode([0u8; 12]))),
            ("signature", Value::Bool(true)),
            ("public_key", Value::String(B64.encode([1u8; 5]))),
            ("public_key", Value::Null),
        ] {
            let mut r = request();
            sign_request(&mut r, &k);
            r.auth.as_mut().unwrap().insert(field.into(), value);
            assert_eq!(evaluate_auth(&r, &policy), AuthDecision::Denied, "{field}");
        }
    }

    #[test]
    fn signature_does_not_change_request_id() {
        let mut r = request();
        sign_request(&mut r, &key());
        let id = r.request_id();
        r.auth
            .as_mut()
            .unwrap()
            .insert("signature".into(), Value::String("AAAA".into()));
        assert_eq!(r.request_id(), id);
    }

    #[test]
    fn canonical_bytes_are_sorted_compact_json() {
        let text = String::from_utf8(request().canonical_bytes()).unwrap();
        assert_eq!(
            text,
            r#"{"auth":{"id":"Sebastian"},"recipient":{"endpoint":"https://eccc.de:234567","protocol":"POST"},"requesting":"dd85a8a245177fe4c4cbd540075a96dc38aefd7780677989be9e1efc92b5f08f","valid_until":"2021-07-30 13:32:44"}"#
        );
    }
}
