#ifndef REVPROBE_H
#define REVPROBE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>
#include <stdbool.h>

// Result of every fallible call.
typedef enum RpStatus {
  RP_STATUS_OK = 0,
  // Bad argument value or mismatched shapes.
  RP_STATUS_INVALID_ARGUMENT = 1,
  // Malformed file contents.
  RP_STATUS_FORMAT = 2,
  // Values violating a data invariant (non-finite, non-binary, ...).
  RP_STATUS_DATA = 3,
  // Probe training produced a non-finite loss.
  RP_STATUS_DIVERGENCE = 4,
  RP_STATUS_IO = 5,
  RP_STATUS_NULL_POINTER = 6,
  // A Rust panic was caught at the boundary.
  RP_STATUS_INTERNAL = 7,
} RpStatus;

// Mean used to normalize mutual information.
typedef enum RpNormalizer {
  RP_NORMALIZER_ARITHMETIC = 0,
  RP_NORMALIZER_GEOMETRIC = 1,
  RP_NORMALIZER_MAX = 2,
  RP_NORMALIZER_MIN = 3,
} RpNormalizer;

// N × M binary concepts with named groups.
typedef struct RpConcepts RpConcepts;

// N × D real-valued features.
typedef struct RpFeatures RpFeatures;

// Trained concepts → clusters probe.
typedef struct RpProbe RpProbe;

// K-means centroids.
typedef struct RpQuantizer RpQuantizer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string; do not free.
const char *rp_version(void);

// Message of the last failed call on this thread, or NULL. Free with
// [`rp_string_free`].
char *rp_last_error_message(void);

// # Safety
// `s` must be NULL or a string returned by this library, not yet freed.
void rp_string_free(char *s);

// Copies `n * dim` row-major values into a new feature handle.
//
// # Safety
// `values` must point to `n * dim` readable doubles; `out` must be writable.
enum RpStatus rp_features_new(const double *values,
                              uintptr_t n,
                              uintptr_t dim,
                              struct RpFeatures **out);

// Loads an RPFM file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum RpStatus rp_features_load(const char *path, struct RpFeatures **out);

// Writes an RPFM file.
//
// # Safety
// `f` must be a live handle; `path` a NUL-terminated string.
enum RpStatus rp_features_save(const struct RpFeatures *f, const char *path);

// # Safety
// `f` must be a live handle or NULL.
uintptr_t rp_features_n_samples(const struct RpFeatures *f);

// # Safety
// `f` must be a live handle or NULL.
uintptr_t rp_features_dim(const struct RpFeatures *f);

// # Safety
// `f` must be NULL or a handle from this library, not yet freed.
void rp_features_free(struct RpFeatures *f);

// Builds concepts from `n * m` row-major bytes (each 0 or 1). All columns
// form one group named `all`, concepts are named `c0`, `c1`, ...
//
// # Safety
// `bits` must point to `n * m` readable bytes; `out` must be writable.
enum RpStatus rp_concepts_new_dense(const uint8_t *bits,
                                    uintptr_t n,
                                    uintptr_t m,
                                    struct RpConcepts **out);

// Loads an RPCM file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum RpStatus rp_concepts_load(const char *path, struct RpConcepts **out);

// # Safety
// `c` must be a live handle or NULL.
uintptr_t rp_concepts_n_samples(const struct RpConcepts *c);

// # Safety
// `c` must be a live handle or NULL.
uintptr_t rp_concepts_n_concepts(const struct RpConcepts *c);

// # Safety
// `c` must be NULL or a handle from this library, not yet freed.
void rp_concepts_free(struct RpConcepts *c);

// Fits K-means (k-means++ seeding, best of `n_restarts`) on the features as
// given; standardize beforehand if needed.
//
// # Safety
// `f` must be a live handle; `out` must be writable.
enum RpStatus rp_kmeans_fit(const struct RpFeatures *f,
                            uintptr_t k,
                            uintptr_t max_steps,
                            uintptr_t n_restarts,
                            uint64_t seed,
                            struct RpQuantizer **out);

// Writes the nearest-centroid index of every sample to `labels_out`.
//
// # Safety
// `q` and `f` must be live handles; `labels_out` must hold
// `rp_features_n_samples(f)` writable elements.
enum RpStatus rp_quantizer_assign(const struct RpQuantizer *q,
                                  const struct RpFeatures *f,
                                  uintptr_t *labels_out);

// Inertia reached when fitting; NaN for a NULL handle.
//
// # Safety
// `q` must be a live handle or NULL.
double rp_quantizer_inertia(const struct RpQuantizer *q);

// # Safety
// `q` must be a live handle or NULL.
uintptr_t rp_quantizer_k(const struct RpQuantizer *q);

// # Safety
// `q` must be a live handle; `path` a NUL-terminated string.
enum RpStatus rp_quantizer_save(const struct RpQuantizer *q, const char *path);

// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum RpStatus rp_quantizer_load(const char *path, struct RpQuantizer **out);

// # Safety
// `q` must be NULL or a handle from this library, not yet freed.
void rp_quantizer_free(struct RpQuantizer *q);

// Trains a reverse probe from `c` to `labels` (values in `[0, k)`, one per
// sample) on a stratified split. `config_json` is a run configuration as JSON
// or NULL for defaults; its split ratios, seed and probe settings apply.
//
// # Safety
// `c` must be a live handle, `labels` must hold `rp_concepts_n_samples(c)`
// elements, `config_json` NULL or NUL-terminated, `out` writable.
enum RpStatus rp_probe_train(const struct RpConcepts *c,
                             const uintptr_t *labels,
                             uintptr_t k,
                             const char *config_json,
                             struct RpProbe **out);

// Arg-max cluster for every sample of `c`.
//
// # Safety
// `p` and `c` must be live handles; `labels_out` must hold
// `rp_concepts_n_samples(c)` writable elements.
enum RpStatus rp_probe_predict(const struct RpProbe *p,
                               const struct RpConcepts *c,
                               uintptr_t *labels_out);

// # Safety
// `p` must be a live handle; `path` a NUL-terminated string.
enum RpStatus rp_probe_save(const struct RpProbe *p, const char *path);

// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum RpStatus rp_probe_load(const char *path, struct RpProbe **out);

// # Safety
// `p` must be NULL or a handle from this library, not yet freed.
void rp_probe_free(struct RpProbe *p);

// Entropy in nats of the distribution given by `counts`.
//
// # Safety
// `counts` must point to `len` readable elements; `out` must be writable.
enum RpStatus rp_entropy(const uint64_t *counts, uintptr_t len, double *out);

// Mutual information (nats) and normalized mutual information of two labelings.
//
// # Safety
// `a` and `b` must point to `n` readable elements; `mi_out` and `nmi_out`
// must each be writable or NULL.
enum RpStatus rp_mutual_info(const uintptr_t *a,
                             const uintptr_t *b,
                             uintptr_t n,
                             enum RpNormalizer normalizer,
                             double *mi_out,
                             double *nmi_out);

// Adjusted mutual information of two labelings.
//
// # Safety
// `a` and `b` must point to `n` readable elements; `out` must be writable.
enum RpStatus rp_ami(const uintptr_t *a,
                     const uintptr_t *b,
                     uintptr_t n,
                     enum RpNormalizer normalizer,
                     double *out);

// Expected mutual information (nats) of a contingency table with the given
// margins under random permutation.
//
// # Safety
// `row_sums` and `col_sums` must point to `n_rows` / `n_cols` readable
// elements; `out` must be writable.
enum RpStatus rp_expected_mi(const uint64_t *row_sums,
                             uintptr_t n_rows,
                             const uint64_t *col_sums,
                             uintptr_t n_cols,
                             double *out);

// Full evaluation (repeated K-means, reverse probes, aggregation); the
// report is returned as a JSON string to free with [`rp_string_free`].
//
// # Safety
// `f` and `c` must be live handles, `config_json` NULL or NUL-terminated,
// `report_out` writable.
enum RpStatus rp_evaluate_json(const struct RpFeatures *f,
                               const struct RpConcepts *c,
                               const char *config_json,
                               char **report_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* REVPROBE_H */
