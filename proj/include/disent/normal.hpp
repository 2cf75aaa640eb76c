#pragma once

namespace disent {

/// Standard normal density.
double normal_pdf(double x);
/// Standard normal CDF via erfc.
double normal_cdf(double x);
/// Inverse standard normal CDF for p in (0, 1): Acklam's rational
/// approximation (relative error < 1.15e-9) polished by one Newton step.
/// Returns -inf / +inf at 0 / 1; throws InputError outside [0, 1].
double normal_quantile(double p);

}  // namespace disent
