#ifndef CAPGATE_H
#define CAPGATE_H

/* Generated by cbindgen from capgate-capi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Operations a policy can grant.
typedef enum CapgateOperation {
  CapgateOpRead = 0,
  CapgateOpWrite = 1,
  CapgateOpSubscribe = 2,
} CapgateOperation;

// Resource URL kinds, mirroring the engine's explicit tagging.
typedef enum CapgateUrlKind {
  CapgateUrlType = 0,
  CapgateUrlObject = 1,
  CapgateUrlAttribute = 2,
} CapgateUrlKind;

// Error codes; all negative so they cannot collide with boolean results.
typedef enum CapgateStatus {
  CapgateOk = 0,
  // A required pointer argument was NULL.
  CapgateErrNullArg = -1,
  // A string argument was not valid UTF-8.
  CapgateErrUtf8 = -2,
  // A URL failed resource-model validation.
  CapgateErrInvalidUrl = -3,
  // An enum argument was out of range, or a field was empty.
  CapgateErrInvalidArg = -4,
  // A JSON document failed to parse.
  CapgateErrParse = -5,
} CapgateStatus;

// Presentation/credential verification outcomes.
typedef enum CapgateVerdict {
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
} CapgateVerdict;

// Opaque policy set.
typedef struct CapgatePolicySet CapgatePolicySet;

// Opaque object-URL → type-URL map backing the decision oracle.
typedef struct CapgateTypeMap CapgateTypeMap;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Create an empty policy set.
struct CapgatePolicySet *capgate_policy_set_new(void);

// Release a policy set. NULL is a no-op.
//
// # Safety
// `set` must have come from `capgate_policy_set_new` and not been freed.
void capgate_policy_set_free(struct CapgatePolicySet *set);

// Add one policy tuple (consumer, operation, resource URL).
//
// # Safety
// `set` must be a live handle; string pointers must be NUL-terminated.
int capgate_policy_set_add(struct CapgatePolicySet *set,
                           const char *consumer_id,
                           enum CapgateOperation op,
                           enum CapgateUrlKind kind,
                           const char *url);

// Add policies from a JSON array in the interchange format:
// `[{"consumer_id": "...", "operation": "Read", "resource": {"kind": "type", "url": "..."}}]`.
// Returns the number of policies added, or a negative status.
//
// # Safety
// `set` must be a live handle; `json` must be NUL-terminated.
int capgate_policy_set_add_json(struct CapgatePolicySet *set, const char *json);

// Number of policies in the set; negative status on NULL.
//
// # Safety
// `set` must be a live handle or NULL.
int capgate_policy_set_len(const struct CapgatePolicySet *set);

// Create an empty type map.
struct CapgateTypeMap *capgate_type_map_new(void);

// Release a type map. NULL is a no-op.
//
// # Safety
// `map` must have come from `capgate_type_map_new` and not been freed.
void capgate_type_map_free(struct CapgateTypeMap *map);

// Record that `object_url` has type `type_url`.
//
// # Safety
// `map` must be a live handle; string pointers must be NUL-terminated.
int capgate_type_map_set(struct CapgateTypeMap *map, const char *object_url, const char *type_url);

// Whether grant URL `a` covers request URL `b` under the type map.
// Returns 1, 0, or a negative status. A NULL map means no type information
// (exact-match semantics only).
//
// # Safety
// `map` must be a live handle or NULL; string pointers must be
// NUL-terminated.
int capgate_covers(enum CapgateUrlKind a_kind,
                   const char *a_url,
                   enum CapgateUrlKind b_kind,
                   const char *b_url,
                   const struct CapgateTypeMap *map);

// Run the access-control decision: does any policy in `set` let
// `consumer_id` perform `op` on the resource? Returns 1, 0, or a negative
// status. Unknown type information denies.
//
// # Safety
// `set` must be a live handle; `map` a live handle or NULL; strings
// NUL-terminated.
int capgate_decide(const struct CapgatePolicySet *set,
                   const char *consumer_id,
                   enum CapgateOperation op,
                   enum CapgateUrlKind kind,
                   const char *url,
                   const struct CapgateTypeMap *map);

// Verify a presentation offline, exactly as a decision point would:
// proof, nonce, audience, then every enclosed credential against the
// supplied status lists.
//
// * `vp_json`: the presentation document.
// * `trusted_paps_json`: `{"pap-id": "base64url Ed25519 key", ...}`.
// * `status_lists_json`: `{"pap-id": <status list document>, ...}`, or
//   NULL when no lists are at hand (revocable credentials then come back
//   as status-unknown).
//
// Returns a `CapgateVerdict` (non-negative) or a negative `CapgateStatus`.
//
// # Safety
// All non-NULL pointers must be NUL-terminated strings.
int capgate_verify_presentation_json(const char *vp_json,
                                     const char *expected_nonce,
                                     const char *expected_audience,
                                     const char *trusted_paps_json,
                                     uint64_t now_unix_secs,
                                     const char *status_lists_json);

// Check one bit of a signed status-list document. Returns 1 (revoked),
// 0 (not revoked), or a negative status; an invalid signature or an index
// past the end is `CAPGATE_ERR_INVALID_ARG`.
//
// # Safety
// String pointers must be NUL-terminated.
int capgate_status_list_is_revoked(const char *status_list_json,
                                   const char *issuer_key_b64,
                                   uint64_t index);

// Library version as a heap string; release with `capgate_string_free`.
char *capgate_version(void);

// Release a string returned by this library. NULL is a no-op.
//
// # Safety
// `s` must have been returned by a capgate function and not yet freed.
void capgate_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CAPGATE_H */
