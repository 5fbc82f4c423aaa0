#ifndef DLCZ_H
#define DLCZ_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DlczStatus {
  DLCZ_STATUS_OK = 0,
  DLCZ_STATUS_NULL_POINTER = 1,
  /*
   Invalid parameter, configuration or input data.
   */
  DLCZ_STATUS_VALIDATION = 2,
  /*
   Insufficient data, failed fit or degenerate statistics.
   */
  DLCZ_STATUS_NUMERIC = 3,
  DLCZ_STATUS_IO = 4,
  DLCZ_STATUS_PANIC = 5,
} DlczStatus;

/*
 Opaque parsed configuration.
 */
typedef struct DlczConfig DlczConfig;

typedef struct DlczBudget {
  double escape;
  double transmission;
  double detector;
  double total;
} DlczBudget;

typedef struct DlczLifetime {
  double angle_rad;
  double lifetime_s;
} DlczLifetime;

typedef struct DlczDecayFit {
  double r0;
  double tau0;
  double residual;
  /*
   NaN when unavailable.
   */
  double r0_sigma;
  /*
   NaN when unavailable.
   */
  double tau0_sigma;
} DlczDecayFit;

/*
 Counts for one analyzer setting. `storage_time` is NaN when unknown.
 */
typedef struct DlczCounts {
  double theta_s;
  double theta_as;
  double storage_time;
  uint64_t n_pulses;
  uint64_t n_d1;
  uint64_t n_d2;
  uint64_t c13;
  uint64_t c24;
  uint64_t c14;
  uint64_t c23;
} DlczCounts;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Copies the last error message of this thread into `buf` (NUL-terminated,
 truncated to `len`). Returns the full message length without the NUL.
 */
size_t dlcz_last_error(char *buf, size_t len);

/*
 Library version as a static NUL-terminated string.
 */
const char *dlcz_version(void);

/*
 Parses TOML configuration text.
 */
enum DlczStatus dlcz_config_from_toml(const char *text, struct DlczConfig **out);

enum DlczStatus dlcz_config_from_file(const char *path, struct DlczConfig **out);

/*
 Built-in parameter sets: "fig8" or "reference_point".
 */
enum DlczStatus dlcz_config_preset(const char *name, struct DlczConfig **out);

/*
 Releases a configuration; NULL is ignored.
 */
void dlcz_config_free(struct DlczConfig *cfg);

/*
 Writes the 64-character SHA-256 hex digest plus NUL; `len` must be >= 65.
 */
enum DlczStatus dlcz_config_hash(const struct DlczConfig *cfg, char *buf, size_t len);

enum DlczStatus dlcz_budget(const struct DlczConfig *cfg, struct DlczBudget *out);

enum DlczStatus dlcz_lifetime(const struct DlczConfig *cfg, struct DlczLifetime *out);

/*
 `R(t) = R0 (exp(-t^2/tau0^2) + exp(-t/tau0)) / 2`.
 */
enum DlczStatus dlcz_retrieval_decay(double r0, double tau0, double t, double *out);

/*
 Least-squares decay fit. `sigma` may be NULL for an unweighted fit.
 */
enum DlczStatus dlcz_fit_decay(const double *t,
                               const double *r,
                               const double *sigma,
                               size_t n,
                               struct DlczDecayFit *out);

/*
 Simulates `trials` trials at each of `n_settings` analyzer settings
 (radians) with the [experiment] section of `cfg`; writes `n_settings`
 tables to `out`.
 */
enum DlczStatus dlcz_simulate(const struct DlczConfig *cfg,
                              double t,
                              const double *theta_s,
                              const double *theta_as,
                              size_t n_settings,
                              uint64_t trials,
                              uint64_t seed,
                              struct DlczCounts *out);

/*
 Polarization correlation `E` of one table.
 */
enum DlczStatus dlcz_correlation(const struct DlczCounts *counts, double *out);

/*
 CHSH parameter of four tables ordered (s,as), (s,as'), (s',as), (s',as'),
 with a Poisson error bar from `replicas` resamples.
 */
enum DlczStatus dlcz_bell_s(const struct DlczCounts *counts,
                            size_t replicas,
                            uint64_t seed,
                            double *s,
                            double *sigma);

/*
 `V = S / (2 sqrt 2)`.
 */
double dlcz_visibility_from_s(double s);

/*
 `F = (3V + 1) / 4`.
 */
double dlcz_fidelity_from_s(double s);

/*
 Repeater rate (pairs/s) for the [repeater] section at `distance` meters.
 A NaN `r0` keeps the configured value.
 */
enum DlczStatus dlcz_repeater_rate(const struct DlczConfig *cfg,
                                   double distance,
                                   double r0,
                                   double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DLCZ_H */
