#ifndef HIERGIBBS_H
#define HIERGIBBS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HgStatus {
  HgStatus_Ok = 0,
  HgStatus_NullPointer = 1,
  HgStatus_InvalidArgument = 2,
  HgStatus_InvalidParameter = 3,
  HgStatus_Numerical = 4,
  HgStatus_NotLogConcave = 5,
  HgStatus_Domain = 6,
  HgStatus_Singular = 7,
  HgStatus_Optimization = 8,
  HgStatus_RadiusTooLarge = 9,
  HgStatus_Degenerate = 10,
  HgStatus_UndefinedEss = 11,
  HgStatus_Config = 12,
  HgStatus_Io = 13,
  HgStatus_Internal = 14,
  HgStatus_Panic = 15,
} HgStatus;

typedef enum HgGapVariant {
  HgGapVariant_P1 = 0,
  HgGapVariant_P2P3 = 1,
  HgGapVariant_Extended = 2,
} HgGapVariant;

typedef enum HgModel {
  HgModel_NormalKnownTau0 = 0,
  HgModel_NormalUnknownTau0 = 1,
  HgModel_BinomialLogit = 2,
} HgModel;

typedef enum HgBlocking {
  HgBlocking_P1 = 0,
  HgBlocking_P2 = 1,
  HgBlocking_P3 = 2,
  HgBlocking_TwoBlock = 3,
  HgBlocking_Extended = 4,
  HgBlocking_FixedDim = 5,
} HgBlocking;

typedef enum HgMuPrior {
  HgMuPrior_Flat = 0,
  /**
   * `mu | tau1 ~ N(mean, scale / tau1)`.
   */
  HgMuPrior_NormalOverTau = 1,
  /**
   * `mu ~ N(mean, scale)`.
   */
  HgMuPrior_NormalFixedVar = 2,
} HgMuPrior;

/**
 * Recorded chain trace.
 */
typedef struct HgChain HgChain;

/**
 * Simulated dataset together with the model that generated it.
 */
typedef struct HgDataset HgDataset;

typedef struct HgPrior {
  enum HgMuPrior mu_kind;
  double mu_mean;
  double mu_scale;
  double tau1_shape;
  double tau1_rate;
  /**
   * Used only by models with unknown `tau0`.
   */
  double tau0_shape;
  double tau0_rate;
} HgPrior;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failing call on this thread (empty if none). The
 * pointer stays valid until the next failing call on this thread.
 */
const char *hg_last_error_message(void);

/**
 * Closed-form asymptotic gap of a normal blocking.
 *
 * # Safety
 * `out` must be null or valid for writing one `double`.
 */
enum HgStatus hg_gap_closed_normal(uintptr_t m,
                                   double tau0,
                                   double tau1,
                                   enum HgGapVariant v,
                                   double *out);

/**
 * Gap from the coupling, conditional-variance and Fisher matrices at
 * `(mu, tau1, tau0)`.
 *
 * # Safety
 * `out` must be null or valid for writing one `double`.
 */
enum HgStatus hg_gap_matrix_normal(double mu,
                                   double tau1,
                                   double tau0,
                                   uintptr_t m,
                                   enum HgGapVariant v,
                                   double *out);

/**
 * Upper bound on the mixing time from a gap, warm-start constant `m_warm`
 * and tolerance `eps`.
 *
 * # Safety
 * `out` must be null or valid for writing one `double`.
 */
enum HgStatus hg_mixing_bound(double gamma, double m_warm, double eps, double *out);

/**
 * Simulates `j` groups of `m` observations at `(mu, tau1, tau0)`.
 *
 * # Safety
 * `out` must be null or valid for writing one pointer. The handle written
 * there must be released with [`hg_dataset_free`].
 */
enum HgStatus hg_dataset_simulate(enum HgModel model,
                                  uintptr_t m,
                                  double mu,
                                  double tau1,
                                  double tau0,
                                  uintptr_t j,
                                  uint64_t seed,
                                  struct HgDataset **out);

/**
 * # Safety
 * `ds` must be a live dataset handle; `out` must be valid for one `size_t`.
 */
enum HgStatus hg_dataset_num_groups(const struct HgDataset *ds, uintptr_t *out);

/**
 * # Safety
 * `ds` must be null or a handle from [`hg_dataset_simulate`] not yet freed.
 */
void hg_dataset_free(struct HgDataset *ds);

/**
 * Runs a chain on `ds`. Components not sampled by the blocking are fixed at
 * `(mu, tau1, tau0)`; sampled ones start at the default initial state.
 *
 * # Safety
 * `ds` and `prior` must be valid; `out` must be valid for writing one
 * pointer. Release the chain with [`hg_chain_free`].
 */
enum HgStatus hg_chain_run(const struct HgDataset *ds,
                           enum HgBlocking block,
                           const struct HgPrior *prior,
                           double mu,
                           double tau1,
                           double tau0,
                           uintptr_t iters,
                           uintptr_t burn_in,
                           uintptr_t thin,
                           uint64_t seed,
                           struct HgChain **out);

/**
 * # Safety
 * `ch` must be a live chain handle; `out` must be valid for one `size_t`.
 */
enum HgStatus hg_chain_rows(const struct HgChain *ch, uintptr_t *out);

/**
 * # Safety
 * `ch` must be a live chain handle; `out` must be valid for one `size_t`.
 */
enum HgStatus hg_chain_cols(const struct HgChain *ch, uintptr_t *out);

/**
 * Name of column `k`, owned by the chain and valid until it is freed.
 *
 * # Safety
 * `ch` must be a live chain handle; `out` must be valid for one pointer.
 */
enum HgStatus hg_chain_column_name(const struct HgChain *ch, uintptr_t k, const char **out);

/**
 * Copies column `k` into `buf`, which must hold `len >= rows` doubles.
 *
 * # Safety
 * `ch` must be a live chain handle; `buf` must be valid for `len` writes.
 */
enum HgStatus hg_chain_column(const struct HgChain *ch, uintptr_t k, double *buf, uintptr_t len);

/**
 * Largest integrated autocorrelation time over the recorded columns.
 *
 * # Safety
 * `ch` must be a live chain handle; `out` must be valid for one `double`.
 */
enum HgStatus hg_chain_max_iat(const struct HgChain *ch, double *out);

/**
 * # Safety
 * `ch` must be null or a handle from [`hg_chain_run`] not yet freed.
 */
void hg_chain_free(struct HgChain *ch);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HIERGIBBS_H */
