#pragma once

#include <vector>

namespace kolmo {

struct SamplePoint {
  double t = 0.0;
  std::vector<double> x;
};

/// Radical inverse of `index` in `base` (Halton coordinate).
double radical_inverse(unsigned index, unsigned base);

/// Deterministic sample of [-L, L]^d x [t_lo, t_hi]: an odd lattice (5 points
/// per axis, so the origin and faces are included) at three times, followed by
/// the first `n_halton` Halton points. A larger `n_halton` yields a superset.
std::vector<SamplePoint> box_samples(int d, double L, double t_lo, double t_hi, int n_halton);

/// Points on radial shells: shell `s` covers radii in
/// [L*s/n_shells, L*(s+1)/n_shells]. Returned grouped by shell.
std::vector<std::vector<SamplePoint>> shell_samples(int d, double L, double t_lo, double t_hi, int n_shells,
                                                    int n_radii = 4, int n_dirs = 32, int n_times = 3);

/// Unit vectors in R^m: {-1, 1} for m = 1, `n` equispaced angles for m = 2,
/// a Fibonacci lattice for m >= 3.
std::vector<std::vector<double>> sphere_directions(int m, int n);

}  // namespace kolmo
