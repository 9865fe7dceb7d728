//! C ABI over the capgate policy engine.
//!
//! Exposes the pure decision core (typed resource URLs, the coverage
//! relation, the policy decision procedure) plus offline presentation
//! verification and status-list checks, so enforcement points written in
//! other languages can link against the same semantics.
//!
//! Conventions: opaque handles created by `*_new` and released by the
//! matching `*_free`; strings are NUL-terminated UTF-8; predicate functions
//! return `1` (true), `0` (false), or a negative `CapgateStatus` code;
//! verification functions return a non-negative `CapgateVerdict` or a
//! negative `CapgateStatus`.

use std::ffi::{c_char, c_int, CStr, CString};

use capgate_core::credential::{
    CredentialVerdict, Presentation, PresentationVerdict, PublicKey, StatusList, StatusListSource,
    TrustedIssuers,
};
use capgate_core::policy::{covers, decide, MapOracle, Operation, Policy, ResourceUrl, UrlKind};

/// Error codes; all negative so they cannot collide with boolean results.
#[repr(C)]
pub enum CapgateStatus {
    CapgateOk = 0,
    /// A required pointer argument was NULL.
    CapgateErrNullArg = -1,
    /// A string argument was not valid UTF-8.
    CapgateErrUtf8 = -2,
    /// A URL failed resource-model validation.
    CapgateErrInvalidUrl = -3,
    /// An enum argument was out of range, or a field was empty.
    CapgateErrInvalidArg = -4,
    /// A JSON document failed to parse.
    CapgateErrParse = -5,
}

/// Resource URL kinds, mirroring the engine's explicit tagging.
#[repr(C)]
#[derive(Clone, Copy)]
pub enum CapgateUrlKind {
    CapgateUrlType = 0,
    CapgateUrlObject = 1,
    CapgateUrlAttribute = 2,
}

/// Operations a policy can grant.
#[repr(C)]
#[derive(Clone, Copy)]
pub enum CapgateOperation {
    CapgateOpRead = 0,
    CapgateOpWrite = 1,
    CapgateOpSubscribe = 2,
}

/// Presentation/credential verification outcomes.
#[repr(C)]
pub enum CapgateVerdict {
    CapgateVerdictOk = 0,
    CapgateVerdictBadProof = 1,
    CapgateVerdictWrongNonce = 2,
    CapgateVerdictWrongAudience = 3,
    CapgateVerdictUntrustedIssuer = 4,
    CapgateVerdictBadSignature = 5,
    CapgateVerdictExpired = 6,
    CapgateVerdictNotYetValid = 7,
    CapgateVerdictRevoked = 8,
    CapgateVerdictStatusUnknown = 9,
}

/// Opaque policy set.
pub struct CapgatePolicySet {
    policies: Vec<Policy>,
}

/// Opaque object-URL → type-URL map backing the decision oracle.
pub struct CapgateTypeMap {
    oracle: MapOracle,
}

fn cstr<'a>(ptr: *const c_char) -> Result<&'a str, CapgateStatus> {
    if ptr.is_null() {
        return Err(CapgateStatus::CapgateErrNullArg);
    }
    unsafe { CStr::from_ptr(ptr) }.to_str().map_err(|_| CapgateStatus::CapgateErrUtf8)
}

fn url_kind(kind: CapgateUrlKind) -> UrlKind {
    match kind {
        CapgateUrlKind::CapgateUrlType => UrlKind::Type,
        CapgateUrlKind::CapgateUrlObject => UrlKind::Object,
        CapgateUrlKind::CapgateUrlAttribute => UrlKind::Attribute,
    }
}

fn operation(op: CapgateOperation) -> Operation {
    match op {
        CapgateOperation::CapgateOpRead => Operation::Read,
        CapgateOperation::CapgateOpWrite => Operation::Write,
        CapgateOperation::CapgateOpSubscribe => Operation::Subscribe,
    }
}

fn resource(kind: CapgateUrlKind, url: *const c_char) -> Result<ResourceUrl, CapgateStatus> {
    let url = cstr(url)?;
    ResourceUrl::new(url_kind(kind), url).map_err(|_| CapgateStatus::CapgateErrInvalidUrl)
}

/// Create an empty policy set.
#[no_mangle]
pub extern "C" fn capgate_policy_set_new() -> *mut CapgatePolicySet {
    Box::into_raw(Box::new(CapgatePolicySet { policies: Vec::new() }))
}

/// Release a policy set. NULL is a no-op.
///
/// # Safety
/// `set` must have come from `capgate_policy_set_new` and not been freed.
#[no_mangle]
pub unsafe extern "C" fn capgate_policy_set_free(set: *mut CapgatePolicySet) {
    if !set.is_null() {
        drop(unsafe { Box::from_raw(set) });
    }
}

/// Add one policy tuple (consumer, operation, resource URL).
///
/// # Safety
/// `set` must be a live handle; string pointers must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn capgate_policy_set_add(
    set: *mut CapgatePolicySet,
    consumer_id: *const c_char,
    op: CapgateOperation,
    kind: CapgateUrlKind,
    url: *const c_char,
) -> c_int {
    let Some(set) = (unsafe { set.as_mut() }) else {
        return CapgateStatus::CapgateErrNullArg as c_int;
    };
    let consumer = match cstr(consumer_id) {
        Ok(s) => s,
        Err(status) => return status as c_int,
    };
    let resource = match resource(kind, url) {
        Ok(r) => r,
        Err(status) => return status as c_int,
    };
    match Policy::new(consumer, operation(op), resource) {
        Ok(policy) => {
            set.policies.push(policy);
            CapgateStatus::CapgateOk as c_int
        }
        Err(_) => CapgateStatus::CapgateErrInvalidArg as c_int,
    }
}

/// Add policies from a JSON array in the interchange format:
/// `[{"consumer_id": "...", "operation": "Read", "resource": {"kind": "type", "url": "..."}}]`.
/// Returns the number of policies added, or a negative status.
///
/// # Safety
/// `set` must be a live handle; `json` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn capgate_policy_set_add_json(
    set: *mut CapgatePolicySet,
    json: *const c_char,
) -> c_int {
    let Some(set) = (unsafe { set.as_mut() }) else {
        return CapgateStatus::CapgateErrNullArg as c_int;
    };
    let text = match cstr(json) {
        Ok(s) => s,
        Err(status) => return status as c_int,
    };
    match serde_json::from_str::<Vec<Policy>>(text) {
        Ok(mut policies) => {
            let added = policies.len() as c_int;
            set.policies.append(&mut policies);
            added
        }
        Err(_) => CapgateStatus::CapgateErrParse as c_int,
    }
}

/// Number of policies in the set; negative status on NULL.
///
/// # Safety
/// `set` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn capgate_policy_set_len(set: *const CapgatePolicySet) -> c_int {
    match unsafe { set.as_ref() } {
        Some(set) => set.policies.len() as c_int,
        None => CapgateStatus::CapgateErrNullArg as c_int,
    }
}

/// Create an empty type map.
#[no_mangle]
pub extern "C" fn capgate_type_map_new() -> *mut CapgateTypeMap {
    Box::into_raw(Box::new(CapgateTypeMap { oracle: MapOracle::new() }))
}

/// Release a type map. NULL is a no-op.
///
/// # Safety
/// `map` must have come from `capgate_type_map_new` and not been freed.
#[no_mangle]
pub unsafe extern "C" fn capgate_type_map_free(map: *mut CapgateTypeMap) {
    if !map.is_null() {
        drop(unsafe { Box::from_raw(map) });
    }
}

/// Record that `object_url` has type `type_url`.
///
/// # Safety
/// `map` must be a live handle; string pointers must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn capgate_type_map_set(
    map: *mut CapgateTypeMap,
    object_url: *const c_char,
    type_url: *const c_char,
) -> c_int {
    let Some(map) = (unsafe { map.as_mut() }) else {
        return CapgateStatus::CapgateErrNullArg as c_int;
    };
    let object = match resource(CapgateUrlKind::CapgateUrlObject, object_url) {
        Ok(r) => r,
        Err(status) => return status as c_int,
    };
    let type_url = match resource(CapgateUrlKind::CapgateUrlType, type_url) {
        Ok(r) => r,
        Err(status) => return status as c_int,
    };
    map.oracle.insert(&object, type_url);
    CapgateStatus::CapgateOk as c_int
}

/// Whether grant URL `a` covers request URL `b` under the type map.
/// Returns 1, 0, or a negative status. A NULL map means no type information
/// (exact-match semantics only).
///
/// # Safety
/// `map` must be a live handle or NULL; string pointers must be
/// NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn capgate_covers(
    a_kind: CapgateUrlKind,
    a_url: *const c_char,
    b_kind: CapgateUrlKind,
    b_url: *const c_char,
    map: *const CapgateTypeMap,
) -> c_int {
    let a = match resource(a_kind, a_url) {
        Ok(r) => r,
        Err(status) => return status as c_int,
    };
    let b = match resource(b_kind, b_url) {
        Ok(r) => r,
        Err(status) => return status as c_int,
    };
    let empty = MapOracle::new();
    let oracle = match unsafe { map.as_ref() } {
        Some(map) => &map.oracle,
        None => &empty,
    };
    covers(&a, &b, oracle) as c_int
}

/// Run the access-control decision: does any policy in `set` let
/// `consumer_id` perform `op` on the resource? Returns 1, 0, or a negative
/// status. Unknown type information denies.
///
/// # Safety
/// `set` must be a live handle; `map` a live handle or NULL; strings
/// NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn capgate_decide(
    set: *const CapgatePolicySet,
    consumer_id: *const c_char,
    op: CapgateOperation,
    kind: CapgateUrlKind,
    url: *const c_char,
    map: *const CapgateTypeMap,
) -> c_int {
    let Some(set) = (unsafe { set.as_ref() }) else {
        return CapgateStatus::CapgateErrNullArg as c_int;
    };
    let consumer = match cstr(consumer_id) {
        Ok(s) => s,
        Err(status) => return status as c_int,
    };
    let target = match resource(kind, url) {
        Ok(r) => r,
        Err(status) => return status as c_int,
    };
    let empty = MapOracle::new();
    let oracle = match unsafe { map.as_ref() } {
        Some(map) => &map.oracle,
        None => &empty,
    };
    decide(&set.policies, consumer, operation(op), &target, oracle) as c_int
}

fn verdict_code(v: PresentationVerdict) -> CapgateVerdict {
    match v {
        PresentationVerdict::Ok => CapgateVerdict::CapgateVerdictOk,
        PresentationVerdict::BadProof => CapgateVerdict::CapgateVerdictBadProof,
        PresentationVerdict::WrongNonce => CapgateVerdict::CapgateVerdictWrongNonce,
        PresentationVerdict::WrongAudience => CapgateVerdict::CapgateVerdictWrongAudience,
        PresentationVerdict::VcFailure(inner) => match inner {
            CredentialVerdict::Ok => CapgateVerdict::CapgateVerdictOk,
            CredentialVerdict::UntrustedIssuer => CapgateVerdict::CapgateVerdictUntrustedIssuer,
            CredentialVerdict::BadSignature => CapgateVerdict::CapgateVerdictBadSignature,
            CredentialVerdict::Expired => CapgateVerdict::CapgateVerdictExpired,
            CredentialVerdict::NotYetValid => CapgateVerdict::CapgateVerdictNotYetValid,
            CredentialVerdict::Revoked => CapgateVerdict::CapgateVerdictRevoked,
            CredentialVerdict::StatusUnknown => CapgateVerdict::CapgateVerdictStatusUnknown,
        },
    }
}

struct IssuerKeyedLists(std::collections::BTreeMap<String, StatusList>);

impl StatusListSource for IssuerKeyedLists {
    fn list_for(&self, issuer: &str, _url: &str) -> Option<&StatusList> {
        self.0.get(issuer)
    }
}

/// Verify a presentation offline, exactly as a decision point would:
/// proof, nonce, audience, then every enclosed credential against the
/// supplied status lists.
///
/// * `vp_json`: the presentation document.
/// * `trusted_paps_json`: `{"pap-id": "base64url Ed25519 key", ...}`.
/// * `status_lists_json`: `{"pap-id": <status list document>, ...}`, or
///   NULL when no lists are at hand (revocable credentials then come back
///   as status-unknown).
///
/// Returns a `CapgateVerdict` (non-negative) or a negative `CapgateStatus`.
///
/// # Safety
/// All non-NULL pointers must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn capgate_verify_presentation_json(
    vp_json: *const c_char,
    expected_nonce: *const c_char,
    expected_audience: *const c_char,
    trusted_paps_json: *const c_char,
    now_unix_secs: u64,
    status_lists_json: *const c_char,
) -> c_int {
    let vp_text = match cstr(vp_json) {
        Ok(s) => s,
        Err(status) => return status as c_int,
    };
    let nonce = match cstr(expected_nonce) {
        Ok(s) => s,
        Err(status) => return status as c_int,
    };
    let audience = match cstr(expected_audience) {
        Ok(s) => s,
        Err(status) => return status as c_int,
    };
    let trusted_text = match cstr(trusted_paps_json) {
        Ok(s) => s,
        Err(status) => return status as c_int,
    };
    let Ok(vp) = serde_json::from_str::<Presentation>(vp_text) else {
        return CapgateStatus::CapgateErrParse as c_int;
    };
    let Ok(trusted_map) =
        serde_json::from_str::<std::collections::BTreeMap<String, String>>(trusted_text)
    else {
        return CapgateStatus::CapgateErrParse as c_int;
    };
    let mut trusted = TrustedIssuers::new();
    for (id, key_b64) in trusted_map {
        match PublicKey::from_b64(&key_b64) {
            Ok(key) => trusted.insert(id, key),
            Err(_) => return CapgateStatus::CapgateErrInvalidArg as c_int,
        }
    }
    let lists = if status_lists_json.is_null() {
        IssuerKeyedLists(Default::default())
    } else {
        let text = match cstr(status_lists_json) {
            Ok(s) => s,
            Err(status) => return status as c_int,
        };
        match serde_json::from_str::<std::collections::BTreeMap<String, StatusList>>(text) {
            Ok(map) => IssuerKeyedLists(map),
            Err(_) => return CapgateStatus::CapgateErrParse as c_int,
        }
    };
    verdict_code(vp.verify(nonce, audience, &trusted, now_unix_secs, &lists)) as c_int
}

/// Check one bit of a signed status-list document. Returns 1 (revoked),
/// 0 (not revoked), or a negative status; an invalid signature or an index
/// past the end is `CAPGATE_ERR_INVALID_ARG`.
///
/// # Safety
/// String pointers must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn capgate_status_list_is_revoked(
    status_list_json: *const c_char,
    issuer_key_b64: *const c_char,
    index: u64,
) -> c_int {
    let text = match cstr(status_list_json) {
        Ok(s) => s,
        Err(status) => return status as c_int,
    };
    let key_b64 = match cstr(issuer_key_b64) {
        Ok(s) => s,
        Err(status) => return status as c_int,
    };
    let Ok(list) = serde_json::from_str::<StatusList>(text) else {
        return CapgateStatus::CapgateErrParse as c_int;
    };
    let Ok(key) = PublicKey::from_b64(key_b64) else {
        return CapgateStatus::CapgateErrInvalidArg as c_int;
    };
    if !list.verify(&key) {
        return CapgateStatus::CapgateErrInvalidArg as c_int;
    }
    match list.is_revoked(index) {
        Some(revoked) => revoked as c_int,
        None => CapgateStatus::CapgateErrInvalidArg as c_int,
    }
}

/// Library version as a heap string; release with `capgate_string_free`.
#[no_mangle]
pub extern "C" fn capgate_version() -> *mut c_char {
    CString::new(env!("CARGO_PKG_VERSION")).map(CString::into_raw).unwrap_or(std::ptr::null_mut())
}

/// Release a string returned by this library. NULL is a no-op.
///
/// # Safety
/// `s` must have been returned by a capgate function and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn capgate_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}
