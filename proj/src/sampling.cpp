#include "kolmo/sampling.hpp"

#include <cmath>

namespace kolmo {

namespace {
const unsigned kPrimes[] = {2, 3, 5, 7, 11, 13};

std::vector<double> lattice_axis(double L, int n) {
  std::vector<double> v(n);
  for (int i = 0; i < n; ++i) v[i] = -L + 2.0 * L * i / (n - 1);
  return v;
}
}  // namespace

double radical_inverse(unsigned index, unsigned base) {
  double inv = 1.0 / base, f = inv, r = 0.0;
  while (index > 0) {
    r += f * (index % base);
    index /= base;
    f *= inv;
  }
  return r;
}

std::vector<SamplePoint> box_samples(int d, double L, double t_lo, double t_hi, int n_halton) {
  std::vector<SamplePoint> out;
  auto axis = lattice_axis(L, 5);
  std::vector<double> times = {t_lo, 0.5 * (t_lo + t_hi), t_hi};
  if (t_hi == t_lo) times = {t_lo};
  int n_lat = 1;
  for (int i = 0; i < d; ++i) n_lat *= 5;
  for (double t : times) {
    for (int idx = 0; idx < n_lat; ++idx) {
      SamplePoint p;
      p.t = t;
      p.x.resize(d);
      int r = idx;
      for (int i = 0; i < d; ++i) {
        p.x[i] = axis[r % 5];
        r /= 5;
      }
      out.push_back(std::move(p));
    }
  }
  for (int j = 1; j <= n_halton; ++j) {
    SamplePoint p;
    p.x.resize(d);
    for (int i = 0; i < d; ++i) p.x[i] = -L + 2.0 * L * radical_inverse(j, kPrimes[i]);
    p.t = t_lo + (t_hi - t_lo) * radical_inverse(j, kPrimes[d]);
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<std::vector<SamplePoint>> shell_samples(int d, double L, double t_lo, double t_hi, int n_shells,
                                                    int n_radii, int n_dirs, int n_times) {
  std::vector<std::vector<SamplePoint>> shells(n_shells);
  auto dirs = sphere_directions(d, n_dirs);
  for (int s = 0; s < n_shells; ++s) {
    for (int ir = 0; ir < n_radii; ++ir) {
      double r = L * (s + (ir + 0.5) / n_radii) / n_shells;
      if (ir == n_radii - 1 && s == n_shells - 1) r = L;
      for (int it = 0; it < n_times; ++it) {
        double t = n_times == 1 ? t_lo : t_lo + (t_hi - t_lo) * it / (n_times - 1);
        for (const auto& e : dirs) {
          SamplePoint p;
          p.t = t;
          p.x.resize(d);
          for (int i = 0; i < d; ++i) p.x[i] = r * e[i];
          shells[s].push_back(std::move(p));
        }
      }
    }
  }
  return shells;
}

std::vector<std::vector<double>> sphere_directions(int m, int n) {
  std::vector<std::vector<double>> out;
  if (m == 1) return {{-1.0}, {1.0}};
  if (m == 2) {
    for (int k = 0; k < n; ++k) {
      double a = 2.0 * M_PI * k / n;
      out.push_back({std::cos(a), std::sin(a)});
    }
    return out;
  }
  const double golden = M_PI * (3.0 - std::sqrt(5.0));
  for (int k = 0; k < n; ++k) {
    double z = 1.0 - 2.0 * (k + 0.5) / n;
    double r = std::sqrt(1.0 - z * z);
    std::vector<double> v(m, 0.0);
    v[0] = r * std::cos(golden * k);
    v[1] = r * std::sin(golden * k);
    v[2] = z;
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace kolmo
