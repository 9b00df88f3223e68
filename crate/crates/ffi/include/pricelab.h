#ifndef PRICELAB_H
#define PRICELAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every function.
 */
typedef enum PlStatus {
  PL_STATUS_OK = 0,
  PL_STATUS_NULL_POINTER = 1,
  PL_STATUS_INVALID_UTF8 = 2,
  PL_STATUS_INVALID_ARGUMENT = 3,
  PL_STATUS_NOT_FOUND = 4,
  PL_STATUS_CONFLICT = 5,
  PL_STATUS_UNAUTHORIZED = 6,
  PL_STATUS_BUFFER_TOO_SMALL = 7,
  PL_STATUS_INTERNAL = 8,
} PlStatus;

/**
 * A lab holding sessions, optionally persisted to a data directory.
 */
typedef struct PlLab PlLab;

/**
 * A simulated supergame.
 */
typedef struct PlTrace PlTrace;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *pl_last_error(void);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must be NULL or a string returned by this library, freed once.
 */
void pl_string_free(char *s);

/**
 * Opens a lab. `data_dir` may be NULL for an in-memory lab; otherwise
 * existing event logs in it are replayed.
 *
 * # Safety
 * `data_dir` must be NULL or a valid string; `out` must be writable.
 */
enum PlStatus pl_lab_new(const char *data_dir, struct PlLab **out);

/**
 * # Safety
 * `lab` must be NULL or a handle from [`pl_lab_new`], freed once.
 */
void pl_lab_free(struct PlLab *lab);

/**
 * Creates a session from a JSON configuration (`"{}"` for defaults) and
 * writes its id to `out_id`.
 *
 * # Safety
 * Pointer arguments must be valid as documented in the crate conventions.
 */
enum PlStatus pl_lab_create_session(const struct PlLab *lab,
                                    const char *config_json,
                                    char **out_id);

/**
 * Seats a participant. `label` may be NULL. Writes
 * `{"token", "participant", "view"}` as JSON.
 *
 * # Safety
 * Pointer arguments must be valid as documented in the crate conventions.
 */
enum PlStatus pl_lab_join(const struct PlLab *lab,
                          const char *session_id,
                          const char *label,
                          char **out_json);

/**
 * Submits a JSON action such as `{"type":"price","price":4}` and writes
 * the participant's new view.
 *
 * # Safety
 * Pointer arguments must be valid as documented in the crate conventions.
 */
enum PlStatus pl_lab_submit(const struct PlLab *lab,
                            const char *token,
                            const char *action_json,
                            char **out_view);

/**
 * Writes the participant's current view as JSON.
 *
 * # Safety
 * Pointer arguments must be valid as documented in the crate conventions.
 */
enum PlStatus pl_lab_view(const struct PlLab *lab, const char *token, char **out_view);

/**
 * Exports a session. `table` is a table name (`rounds`, `adoptions`,
 * `beliefs`, `payouts`, `trials`) for CSV, or `jsonl` for the event log.
 * `out_partial` (may be NULL) is set to 1 while the session is running.
 *
 * # Safety
 * Pointer arguments must be valid as documented in the crate conventions.
 */
enum PlStatus pl_lab_export(const struct PlLab *lab,
                            const char *session_id,
                            const char *table,
                            char **out,
                            uint8_t *out_partial);

/**
 * Profits and market price of one stage game.
 *
 * # Safety
 * All out-pointers must be writable.
 */
enum PlStatus pl_stage_outcome(uint8_t price_a,
                               uint8_t price_b,
                               int64_t *out_profit_a,
                               int64_t *out_profit_b,
                               uint8_t *out_market_price);

/**
 * Writes the pure Nash equilibria as flattened `(a, b)` pairs into
 * `out_pairs` (room for `capacity` pairs) and their count to `out_len`.
 * With too little room, `out_len` still receives the count.
 *
 * # Safety
 * `out_pairs` must have room for `2 * capacity` bytes; `out_len` writable.
 */
enum PlStatus pl_pure_nash(uint8_t *out_pairs, size_t capacity, size_t *out_len);

/**
 * Smallest discount factor sustaining grim-trigger collusion at `price`,
 * as the fraction `num / den`.
 *
 * # Safety
 * Out-pointers must be writable.
 */
enum PlStatus pl_grim_trigger_threshold(uint8_t price_value, int64_t *out_num, int64_t *out_den);

/**
 * Smallest discount factor at which the one-period punishment strategy is
 * self-enforcing, as `num / den`.
 *
 * # Safety
 * Out-pointers must be writable.
 */
enum PlStatus pl_wsls_threshold(int64_t *out_num, int64_t *out_den);

/**
 * The algorithm's price after last-round prices `(own, opponent)`. Pass
 * `-1` for both to ask for the opening price.
 *
 * # Safety
 * `out_price` must be writable.
 */
enum PlStatus pl_wsls_action(int32_t own, int32_t opponent, uint8_t *out_price);

/**
 * Plays `length` rounds between two bots given by name (`"wsls"`,
 * `"cyclic_undercut"`) or JSON spec.
 *
 * # Safety
 * Pointer arguments must be valid as documented in the crate conventions.
 */
enum PlStatus pl_trace_simulate(const char *bot_a,
                                const char *bot_b,
                                size_t length,
                                struct PlTrace **out);

/**
 * Number of rounds in a trace; 0 for NULL.
 *
 * # Safety
 * `trace` must be NULL or a live handle.
 */
size_t pl_trace_len(const struct PlTrace *trace);

/**
 * Prices and profits of round `index` (0-based).
 *
 * # Safety
 * `trace` must be a live handle; `out_prices` and `out_profits` must each
 * have room for two elements.
 */
enum PlStatus pl_trace_round(const struct PlTrace *trace,
                             size_t index,
                             uint8_t *out_prices,
                             int64_t *out_profits);

/**
 * The trace as CSV.
 *
 * # Safety
 * `trace` must be a live handle; `out` writable.
 */
enum PlStatus pl_trace_csv(const struct PlTrace *trace, char **out);

/**
 * # Safety
 * `trace` must be NULL or a handle from [`pl_trace_simulate`], freed once.
 */
void pl_trace_free(struct PlTrace *trace);

/**
 * Trains one self-play run from a JSON trainer configuration (`"{}"` for
 * defaults) and writes its diagnostics as JSON.
 *
 * # Safety
 * Pointer arguments must be valid as documented in the crate conventions.
 */
enum PlStatus pl_train_selfplay(const char *config_json, char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PRICELAB_H */
