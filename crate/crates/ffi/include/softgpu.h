#ifndef SOFTGPU_H
#define SOFTGPU_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  SG_STATUS_OK = 0,
  SG_STATUS_NULL_ARGUMENT = 1,
  SG_STATUS_INVALID_UTF8 = 2,
  SG_STATUS_ASSEMBLY = 3,
  SG_STATUS_CONTAINER = 4,
  SG_STATUS_CONFIG = 5,
  SG_STATUS_UNSUPPORTED_INSTRUCTION = 6,
  SG_STATUS_INVALID_LAUNCH = 7,
  SG_STATUS_MEMORY = 8,
  SG_STATUS_RUNTIME = 9,
  SG_STATUS_BUFFER_TOO_SMALL = 10,
  SG_STATUS_UNKNOWN_COUNTER = 11,
  SG_STATUS_PANIC = 12,
} SgStatus;

/**
 * An assembled kernel.
 */
typedef struct SgKernel SgKernel;

/**
 * A global memory image.
 */
typedef struct SgMemory SgMemory;

/**
 * Counters and stack profile of one finished launch.
 */
typedef struct SgRun SgRun;

/**
 * Hardware configuration. Start from [`sg_config_default`].
 */
typedef struct {
  uint32_t num_sms;
  /**
   * 8, 16 or 32.
   */
  uint32_t sps_per_sm;
  /**
   * 0 to 32.
   */
  uint32_t warp_stack_depth;
  /**
   * 2 or 3. Two operand units require `mad_enabled = false`.
   */
  uint32_t operand_units;
  bool mad_enabled;
  uint32_t global_mem_penalty;
  uint32_t shared_mem_penalty;
  /**
   * Re-check mask conservation and reconvergence at every stack event.
   */
  bool check_invariants;
} SgConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or an empty string.
 * The pointer stays valid until the next failing call on this thread.
 */
const char *sg_last_error(void);

/**
 * Static name of a status code.
 */
const char *sg_status_name(SgStatus status);

/**
 * # Safety
 * `out` must be null or point to writable memory for one `SgConfig`.
 */
SgStatus sg_config_default(SgConfig *out);

/**
 * Blocks that fit on one SM at once.
 *
 * # Safety
 * `out` must be null or point to a writable `uint32_t`.
 */
SgStatus sg_occupancy(uint32_t block_dim,
                      uint32_t regs_per_thread,
                      uint32_t shared_bytes,
                      uint32_t *out);

/**
 * Assembles NUL-terminated kernel source.
 *
 * # Safety
 * `source` must be null or a NUL-terminated string; `out` must be null or
 * point to a writable handle slot.
 */
SgStatus sg_kernel_assemble(const char *source, SgKernel **out);

/**
 * Loads a `.gk` container.
 *
 * # Safety
 * `bytes` must point to `len` readable bytes; `out` must be null or point to
 * a writable handle slot.
 */
SgStatus sg_kernel_load(const uint8_t *bytes, size_t len, SgKernel **out);

/**
 * Serializes a kernel as a `.gk` container. With a too small `buf` this
 * returns `BufferTooSmall` and only sets `needed`.
 *
 * # Safety
 * `kernel` must be a live handle; `buf` must point to `cap` writable bytes;
 * `needed` must be null or point to a writable `size_t`.
 */
SgStatus sg_kernel_save(const SgKernel *kernel, uint8_t *buf, size_t cap, size_t *needed);

/**
 * # Safety
 * `kernel` must be null or a handle not yet freed.
 */
void sg_kernel_free(SgKernel *kernel);

/**
 * Zero-filled memory of `size_bytes`, rounded up to a word.
 *
 * # Safety
 * `out` must be null or point to a writable handle slot.
 */
SgStatus sg_memory_new(uint32_t size_bytes, SgMemory **out);

/**
 * Writes `count` words at byte address `addr` (word aligned).
 *
 * # Safety
 * `mem` must be a live handle and `words` must point to `count` words.
 */
SgStatus sg_memory_write(SgMemory *mem, uint32_t addr, const uint32_t *words, size_t count);

/**
 * Reads `count` words from byte address `addr` (word aligned).
 *
 * # Safety
 * `mem` must be a live handle and `out` must point to `count` writable words.
 */
SgStatus sg_memory_read(const SgMemory *mem, uint32_t addr, uint32_t *out, size_t count);

/**
 * # Safety
 * `mem` must be null or a handle not yet freed.
 */
void sg_memory_free(SgMemory *mem);

/**
 * Runs one launch over `mem`. Kernel parameters are `param_count` words
 * placed at address 0. On success `mem` holds the final memory and `out`
 * a new run handle; on failure `mem` is left unchanged.
 *
 * # Safety
 * `kernel`, `config` and `mem` must be live; `params` must point to
 * `param_count` words; `out` must point to a writable handle slot.
 */
SgStatus sg_launch(const SgKernel *kernel,
                   const SgConfig *config,
                   uint32_t grid_dim,
                   uint32_t block_dim,
                   const uint32_t *params,
                   size_t param_count,
                   SgMemory *mem,
                   SgRun **out);

/**
 * Reads a counter by its report name, e.g. `cycles` or `global_loads`.
 *
 * # Safety
 * `run` must be live, `name` NUL-terminated and `out` writable.
 */
SgStatus sg_run_counter(const SgRun *run, const char *name, uint64_t *out);

/**
 * # Safety
 * `run` must be live and `out` writable.
 */
SgStatus sg_run_cycles(const SgRun *run, uint64_t *out);

/**
 * Deepest warp stack reached by any warp.
 *
 * # Safety
 * `run` must be live and `out` writable.
 */
SgStatus sg_run_max_stack_depth(const SgRun *run, uint32_t *out);

/**
 * Writes the text report with unit energy weights. With a too small `buf`
 * this returns `BufferTooSmall` and only sets `needed`.
 *
 * # Safety
 * `run` must be live; `buf` must point to `cap` writable bytes; `needed`
 * must be writable.
 */
SgStatus sg_run_report(const SgRun *run, char *buf, size_t cap, size_t *needed);

/**
 * # Safety
 * `run` must be null or a handle not yet freed.
 */
void sg_run_free(SgRun *run);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SOFTGPU_H */
