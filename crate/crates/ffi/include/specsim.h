#ifndef SPECSIM_H
#define SPECSIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SpecsimScheme {
  SPECSIM_SCHEME_BASELINE = 0,
  SPECSIM_SCHEME_STT_RENAME = 1,
  SPECSIM_SCHEME_STT_ISSUE = 2,
  SPECSIM_SCHEME_NDA = 3,
} SpecsimScheme;

typedef enum SpecsimStatus {
  SPECSIM_STATUS_OK = 0,
  SPECSIM_STATUS_NULL_POINTER = 1,
  SPECSIM_STATUS_INVALID_UTF8 = 2,
  SPECSIM_STATUS_PARSE_ERROR = 3,
  SPECSIM_STATUS_INVALID_ARGUMENT = 4,
  SPECSIM_STATUS_SIMULATION_ERROR = 5,
  /**
   * The simulator has already committed `HALT`.
   */
  SPECSIM_STATUS_HALTED = 6,
  SPECSIM_STATUS_PANIC = 7,
} SpecsimStatus;

/**
 * An assembled or generated program.
 */
typedef struct SpecsimProgram SpecsimProgram;

/**
 * A simulator stepping one program under one scheme and config.
 */
typedef struct SpecsimSim SpecsimSim;

typedef struct SpecsimStats {
  uint64_t cycles;
  uint64_t committed_instrs;
  double ipc;
  uint64_t loads_forwarded;
  uint64_t forwarding_errors;
  uint64_t squashes;
  uint64_t taint_delays;
  uint64_t nop_issues;
  uint64_t partial_store_issues;
  uint64_t pending_broadcast_peak;
  uint64_t replays;
  uint64_t executed_slots;
  uint64_t idle_slots;
} SpecsimStats;

typedef struct SpecsimLogicCost {
  uint64_t depth;
  uint64_t comparators;
  uint64_t muxes;
  uint64_t storage_bits;
} SpecsimLogicCost;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL
 * terminated, truncated to `len`). Returns the full message length, not
 * counting the terminator. An empty message means the last call succeeded.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t specsim_last_error(char *buf, size_t len);

/**
 * Assembles program text.
 *
 * # Safety
 * `text` must be a valid C string; `out` must be valid for writes.
 */
enum SpecsimStatus specsim_program_assemble(const char *text, struct SpecsimProgram **out);

/**
 * Generates a synthetic workload. `kind` is `compute_bound`,
 * `pointer_chase`, `store_load_mix` or `mixed`.
 *
 * # Safety
 * `kind` must be a valid C string; `out` must be valid for writes.
 */
enum SpecsimStatus specsim_program_generate(const char *kind,
                                            size_t size,
                                            uint64_t seed,
                                            struct SpecsimProgram **out);

/**
 * Builds the bounds-check-bypass gadget with its secret at `secret_addr`.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum SpecsimStatus specsim_program_spectre_v1(uint64_t secret_addr,
                                              uint64_t probe_stride,
                                              struct SpecsimProgram **out);

/**
 * Number of static instructions in the program.
 *
 * # Safety
 * `program` must be a live handle; `out` must be valid for writes.
 */
enum SpecsimStatus specsim_program_len(const struct SpecsimProgram *program, size_t *out);

/**
 * # Safety
 * `program` must be null or a handle not yet freed.
 */
void specsim_program_free(struct SpecsimProgram *program);

/**
 * Creates a simulator. The program is copied; the handle can be freed
 * afterwards.
 *
 * # Safety
 * `program` must be a live handle, `config` a valid C string and `out`
 * valid for writes.
 */
enum SpecsimStatus specsim_sim_new(const struct SpecsimProgram *program,
                                   enum SpecsimScheme scheme,
                                   const char *config,
                                   struct SpecsimSim **out);

/**
 * Advances one cycle. `halted` (optional) is set once `HALT` has committed.
 *
 * # Safety
 * `sim` must be a live handle; `halted` must be null or valid for writes.
 */
enum SpecsimStatus specsim_sim_step(struct SpecsimSim *sim, bool *halted);

/**
 * Runs until `HALT` commits or `max_cycles` have elapsed in total, then
 * fills `stats` (optional) with the counters so far.
 *
 * # Safety
 * `sim` must be a live handle; `stats` must be null or valid for writes.
 */
enum SpecsimStatus specsim_sim_run(struct SpecsimSim *sim,
                                   uint64_t max_cycles,
                                   struct SpecsimStats *stats);

/**
 * Counters over the cycles stepped so far.
 *
 * # Safety
 * `sim` must be a live handle; `stats` must be valid for writes.
 */
enum SpecsimStatus specsim_sim_stats(const struct SpecsimSim *sim, struct SpecsimStats *stats);

/**
 * Architectural register value (`reg` in 0..32).
 *
 * # Safety
 * `sim` must be a live handle; `out` must be valid for writes.
 */
enum SpecsimStatus specsim_sim_reg(const struct SpecsimSim *sim, uint32_t reg, uint64_t *out);

/**
 * # Safety
 * `sim` must be null or a handle not yet freed.
 */
void specsim_sim_free(struct SpecsimSim *sim);

/**
 * Runs the program once per secret variant (variant `k` stores `k` in
 * every secret cell) and compares the observation traces.
 * `distinguishable` is set when any variant's trace differs.
 *
 * # Safety
 * `program` must be a live handle, `config` a valid C string and
 * `distinguishable` valid for writes.
 */
enum SpecsimStatus specsim_check_noninterference(const struct SpecsimProgram *program,
                                                 enum SpecsimScheme scheme,
                                                 const char *config,
                                                 uint32_t variants,
                                                 bool *distinguishable);

/**
 * Logic cost of a scheme's extra hardware for a core of the given shape.
 * The baseline has none and reports all zeros.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum SpecsimStatus specsim_timing_cost(enum SpecsimScheme scheme,
                                       size_t width,
                                       size_t phys_regs,
                                       size_t mem_ports,
                                       size_t lq_entries,
                                       struct SpecsimLogicCost *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPECSIM_H */
