/* C call surface implemented by an accelerated batched alignment kernel.
 *
 * data:        batch x max_p x max_f doubles, row-major, frame index fastest.
 * valid_p/f:   per-item valid lengths (batch entries each).
 * assignment:  batch x max_f int32 output; frames >= valid_f[b] are set to -1.
 * failed_item: on a per-item error, the index of the first failing item.
 *
 * Returns POLYVITS_MAS_OK, or one of the error codes below. Items must be
 * bit-identical to the reference search (stay on ties, left-to-right sums).
 */
#ifndef POLYVITS_ALIGN_KERNEL_ABI_H_
#define POLYVITS_ALIGN_KERNEL_ABI_H_

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#define POLYVITS_MAS_OK 0
#define POLYVITS_MAS_LAYOUT_ERROR 1
#define POLYVITS_MAS_INFEASIBLE 2

#define POLYVITS_MAS_KERNEL_SYMBOL "polyvits_mas_batch"

typedef int (*polyvits_mas_batch_fn)(const double* data, int64_t batch, int64_t max_p, int64_t max_f,
                                     const int32_t* valid_p, const int32_t* valid_f, int32_t* assignment,
                                     int64_t* failed_item);

#ifdef __cplusplus
}
#endif

#endif /* POLYVITS_ALIGN_KERNEL_ABI_H_ */
