#include "chiptrap/trap.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

#include <Eigen/Dense>

#include "chiptrap/errors.hpp"
#include "chiptrap/quadrature.hpp"

namespace chiptrap {

namespace {

template <int N>
using VecN = Eigen::Matrix<double, N, 1>;
template <int N>
using MatN = Eigen::Matrix<double, N, N>;

template <int N>
struct NewtonFunctions {
  std::function<double(const VecN<N>&)> value;
  std::function<VecN<N>(const VecN<N>&)> gradient;
  std::function<MatN<N>(const VecN<N>&)> hessian;
  /// Returns false when x left the admissible region.
  std::function<bool(const VecN<N>&)> admissible;
};

struct NewtonSettings {
  int max_iterations = 200;
  double step_tolerance = 1e-13;
  double trust_radius = 40e-6;
};

enum class NewtonStatus { Converged, Flat, Inadmissible, MaxIterations };

template <int N>
NewtonStatus newton_minimize(const NewtonFunctions<N>& fn, VecN<N>& x, const NewtonSettings& s) {
  double fx = fn.value(x);
  for (int it = 0; it < s.max_iterations; ++it) {
    const VecN<N> g = fn.gradient(x);
    const MatN<N> H = fn.hessian(x);
    Eigen::LLT<MatN<N>> llt(H);
    const bool pd = llt.info() == Eigen::Success;
    VecN<N> step;
    if (pd) {
      step = -llt.solve(g);
    } else {
      const double gn = g.norm();
      if (gn == 0.0) return NewtonStatus::Flat;
      step = -g / gn * (0.25 * s.trust_radius);
    }
    const double len = step.norm();
    if (!std::isfinite(len)) return NewtonStatus::MaxIterations;
    if (len > s.trust_radius) step *= s.trust_radius / len;
    if (pd && len < s.step_tolerance) {
      x += step;
      return NewtonStatus::Converged;
    }
    // Below ~1 nm the energy differences drown in rounding; take the Newton step as is.
    if (pd && len < 1e-9) {
      x += step;
      if (!fn.admissible(x)) return NewtonStatus::Inadmissible;
      fx = fn.value(x);
      continue;
    }
    double alpha = 1.0;
    const double slope = g.dot(step);
    bool accepted = false;
    for (int k = 0; k < 40; ++k) {
      const VecN<N> trial = x + alpha * step;
      if (fn.admissible(trial)) {
        const double ft = fn.value(trial);
        if (ft <= fx + 1e-4 * alpha * slope) {
          x = trial;
          fx = ft;
          accepted = true;
          break;
        }
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      if (pd && len < 1e-7) return NewtonStatus::Converged;
      if (!fn.admissible(x + step)) return NewtonStatus::Inadmissible;
      return NewtonStatus::MaxIterations;
    }
  }
  return NewtonStatus::MaxIterations;
}

MatN<3> to_eigen(const Mat3& m) {
  MatN<3> out;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) out(i, j) = m[i][j];
  return out;
}

VecN<3> to_eigen(const Vec3& v) { return {v.x, v.y, v.z}; }
Vec3 to_vec3(const VecN<3>& v) { return {v(0), v(1), v(2)}; }

/// |B| as a landscape (unit "moment"), used for axial profiles.
class FieldMagnitudeLandscape final : public EnergyLandscape {
 public:
  explicit FieldMagnitudeLandscape(FieldModel model) : model_(std::move(model)) {}
  double energy(const Vec3& p) const override { return model_.magnitude(p); }
  Vec3 gradient(const Vec3& p) const override { return model_.magnitude_gradient(p); }
  double mass() const override { return 1.0; }
  const FieldModel& model() const { return model_; }

 private:
  FieldModel model_;
};

TrapCharacterization characterize(const EnergyLandscape& landscape, const Vec3& p,
                                  std::optional<double> field_magnitude) {
  TrapCharacterization t;
  t.position = p;
  t.energy = landscape.energy(p);
  t.surface_distance = p.z;
  const Eigen::SelfAdjointEigenSolver<MatN<3>> eig(to_eigen(landscape.hessian(p)));
  for (int i = 0; i < 3; ++i) {
    const double lambda = eig.eigenvalues()(i);
    t.freqs[i] = std::sqrt(std::max(lambda, 0.0) / landscape.mass()) / (2.0 * units::pi);
    t.axes[i] = to_vec3(eig.eigenvectors().col(i));
  }
  if (field_magnitude) {
    t.B0 = *field_magnitude;
    t.classification = t.B0 < kQuadrupoleThreshold ? TrapClass::QuadrupoleLike : TrapClass::IoffePritchard;
  } else {
    t.B0 = std::numeric_limits<double>::quiet_NaN();
  }
  return t;
}

TrapCharacterization minimize_landscape(const EnergyLandscape& landscape, const Vec3& seed,
                                        const FindMinimumOptions& o,
                                        const std::function<std::optional<double>(const Vec3&)>& bmag) {
  if (!(seed.z > 0.0)) throw InvalidParameter("seed must lie in the trapping half-space z > 0");
  NewtonFunctions<3> fn;
  fn.value = [&](const VecN<3>& x) { return landscape.energy(to_vec3(x)); };
  fn.gradient = [&](const VecN<3>& x) { return to_eigen(landscape.gradient(to_vec3(x))); };
  fn.hessian = [&](const VecN<3>& x) { return to_eigen(landscape.hessian(to_vec3(x))); };
  fn.admissible = [&](const VecN<3>& x) {
    return x(2) > o.min_height && norm(to_vec3(x) - seed) < o.max_travel;
  };
  NewtonSettings s;
  s.max_iterations = o.max_iterations;
  s.step_tolerance = o.position_tolerance;
  s.trust_radius = o.trust_radius;
  VecN<3> x = to_eigen(seed);
  switch (newton_minimize<3>(fn, x, s)) {
    case NewtonStatus::Converged:
      break;
    case NewtonStatus::Flat:
      throw NoConvergence("potential is flat at the seed; no minimum exists");
    case NewtonStatus::Inadmissible:
      throw NoConvergence("minimum search left the admissible region (surface or travel limit)");
    case NewtonStatus::MaxIterations:
      throw NoConvergence("minimum search did not converge");
  }
  const Vec3 p = to_vec3(x);
  if (!(norm(landscape.gradient(p)) < o.gradient_tolerance))
    throw NoConvergence("residual gradient above tolerance at the converged point");
  TrapCharacterization t = characterize(landscape, p, bmag(p));
  for (double f : t.freqs)
    if (!(f > 0.0)) throw NoConvergence("converged point is not a strict minimum");
  if (o.require_ioffe_pritchard && t.classification == TrapClass::QuadrupoleLike)
    throw TrapError("converged to a quadrupole-like point (|B| below 0.1 G)");
  return t;
}

double parabolic_peak(double xm, double x0, double xp, double fm, double f0, double fp, double* at) {
  const double denom = fm - 2.0 * f0 + fp;
  if (denom >= 0.0 || !std::isfinite(denom)) {
    if (at) *at = x0;
    return f0;
  }
  const double h = x0 - xm;
  const double off = 0.5 * h * (fm - fp) / denom;
  if (at) *at = x0 + off;
  (void)xp;
  return f0 - 0.25 * (fm - fp) * off / h;
}

struct PathMax {
  double value = -std::numeric_limits<double>::infinity();
  bool interior = false;
};

PathMax path_maximum(const std::vector<double>& xs, const std::vector<double>& fs) {
  // Escape level along a path: the first barrier crossed. Past it the atom is in another
  // basin, so whatever the path meets later does not matter.
  PathMax pm;
  if (fs.empty()) return pm;
  if (fs.size() > 1 && fs[1] < fs[0]) {
    pm.value = fs[0];
    pm.interior = true;
    return pm;
  }
  for (std::size_t i = 1; i + 1 < fs.size(); ++i) {
    if (fs[i] >= fs[i - 1] && fs[i] > fs[i + 1]) {
      pm.interior = true;
      pm.value = parabolic_peak(xs[i - 1], xs[i], xs[i + 1], fs[i - 1], fs[i], fs[i + 1], nullptr);
      return pm;
    }
  }
  pm.value = *std::max_element(fs.begin(), fs.end());
  return pm;
}

}  // namespace

Mat3 EnergyLandscape::hessian(const Vec3& p) const {
  constexpr double h = kDefaultFdStep;
  Mat3 H{};
  for (int j = 0; j < 3; ++j) {
    Vec3 e;
    e[j] = h;
    const Vec3 d = (gradient(p + e) - gradient(p - e)) / (2.0 * h);
    for (int i = 0; i < 3; ++i) H[i][j] = d[i];
  }
  for (int i = 0; i < 3; ++i)
    for (int j = i + 1; j < 3; ++j) H[i][j] = H[j][i] = 0.5 * (H[i][j] + H[j][i]);
  return H;
}

double TrapCharacterization::frequency_along(const Vec3& direction) const {
  int best = 0;
  double best_dot = -1.0;
  for (int i = 0; i < 3; ++i) {
    const double d = std::abs(dot(axes[i], direction));
    if (d > best_dot) {
      best_dot = d;
      best = i;
    }
  }
  return freqs[best];
}

TrapCharacterization find_minimum(const EnergyLandscape& landscape, const Vec3& seed,
                                  const FindMinimumOptions& options) {
  std::function<std::optional<double>(const Vec3&)> bmag = [](const Vec3&) -> std::optional<double> {
    return std::nullopt;
  };
  if (auto* pl = dynamic_cast<const PotentialLandscape*>(&landscape)) {
    bmag = [pl](const Vec3& p) -> std::optional<double> { return pl->potential().field().magnitude(p); };
  }
  return minimize_landscape(landscape, seed, options, bmag);
}

TrapCharacterization find_minimum(const ChipLayout& layout, const ControlVector& ctrl,
                                  const SpeciesParams& species, const Vec3& seed,
                                  const FindMinimumOptions& options) {
  const PotentialLandscape landscape(layout, ctrl, species);
  return find_minimum(landscape, seed, options);
}

bool DomainBox::contains(const Vec3& p) const {
  for (int i = 0; i < 3; ++i)
    if (p[i] < lo[i] || p[i] > hi[i]) return false;
  return true;
}

std::optional<Vec3> transverse_minimum(const EnergyLandscape& landscape, double x, double seed_y,
                                       double seed_z) {
  NewtonFunctions<2> fn;
  fn.value = [&](const VecN<2>& q) { return landscape.energy({x, q(0), q(1)}); };
  fn.gradient = [&](const VecN<2>& q) {
    const Vec3 g = landscape.gradient({x, q(0), q(1)});
    return VecN<2>(g.y, g.z);
  };
  fn.hessian = [&](const VecN<2>& q) {
    constexpr double h = kDefaultFdStep;
    MatN<2> H;
    for (int j = 0; j < 2; ++j) {
      Vec3 e;
      e[j + 1] = h;
      const Vec3 p{x, q(0), q(1)};
      const Vec3 d = (landscape.gradient(p + e) - landscape.gradient(p - e)) / (2.0 * h);
      H(0, j) = d.y;
      H(1, j) = d.z;
    }
    const double off = 0.5 * (H(0, 1) + H(1, 0));
    H(0, 1) = H(1, 0) = off;
    return H;
  };
  const VecN<2> start(seed_y, seed_z);
  fn.admissible = [&](const VecN<2>& q) { return q(1) > 1e-6 && (q - start).norm() < 1.5e-3; };
  NewtonSettings s;
  s.max_iterations = 100;
  s.step_tolerance = 1e-12;
  VecN<2> q = start;
  const NewtonStatus status = newton_minimize<2>(fn, q, s);
  // a flat plane (bias only) has its minimum everywhere, the seed included
  if (status == NewtonStatus::Flat) return Vec3{x, seed_y, seed_z};
  if (status != NewtonStatus::Converged) return std::nullopt;
  return Vec3{x, q(0), q(1)};
}

bool AxialProfile::complete() const {
  return std::all_of(samples.begin(), samples.end(), [](const ProfileSample& s) { return s.valid; });
}

AxialProfile axial_profile(const ChipLayout& layout, const ControlVector& ctrl, double x_lo,
                           double x_hi, int n, double seed_y, double seed_z, int threads) {
  if (n < 2) throw InvalidParameter("axial profile needs at least two samples");
  if (!(x_hi > x_lo)) throw InvalidParameter("axial profile range must be increasing");
  const FieldMagnitudeLandscape landscape{FieldModel(layout, ctrl)};
  AxialProfile profile;
  profile.samples.resize(static_cast<std::size_t>(n));
  const double dx = (x_hi - x_lo) / (n - 1);
  constexpr int kChunk = 64;
  constexpr int kOverlap = 3;
  const int chunks = (n + kChunk - 1) / kChunk;

  auto run_chunk = [&](int c) {
    const int begin = c * kChunk;
    const int end = std::min(n, begin + kChunk);
    const int warm = std::max(0, begin - kOverlap);
    double y = seed_y;
    double z = seed_z;
    for (int i = warm; i < end; ++i) {
      const double x = x_lo + dx * i;
      auto m = transverse_minimum(landscape, x, y, z);
      if (!m) m = transverse_minimum(landscape, x, seed_y, seed_z);
      if (i < begin) {
        if (m) {
          y = m->y;
          z = m->z;
        }
        continue;
      }
      ProfileSample& s = profile.samples[static_cast<std::size_t>(i)];
      s.x = x;
      if (m) {
        y = m->y;
        z = m->z;
        s.y = y;
        s.z = z;
        s.Bmin = landscape.energy(*m);
      } else {
        s.valid = false;
        s.Bmin = std::numeric_limits<double>::quiet_NaN();
      }
    }
  };

  const int t = std::max(1, std::min(threads, chunks));
  if (t == 1) {
    for (int c = 0; c < chunks; ++c) run_chunk(c);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(t));
    for (int w = 0; w < t; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (int c = w; c < chunks; c += t) run_chunk(c);
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  return profile;
}

double trap_depth(const EnergyLandscape& landscape, const TrapCharacterization& trap,
                  const DomainBox& box, double step) {
  if (!box.contains(trap.position)) throw InvalidParameter("domain box does not contain the trap");
  const double u0 = landscape.energy(trap.position);
  std::vector<PathMax> paths;

  const Vec3 dirs[] = {{0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  for (const Vec3& d : dirs) {
    std::vector<double> s;
    std::vector<double> f;
    for (int k = 0;; ++k) {
      const Vec3 p = trap.position + d * (step * k);
      if (!box.contains(p)) break;
      s.push_back(step * k);
      f.push_back(landscape.energy(p));
    }
    paths.push_back(path_maximum(s, f));
  }

  const double axial_step = 5.0 * step;
  for (double sign : {1.0, -1.0}) {
    std::vector<double> s{0.0};
    std::vector<double> f{u0};
    double y = trap.position.y;
    double z = trap.position.z;
    for (int k = 1;; ++k) {
      const double x = trap.position.x + sign * axial_step * k;
      if (x < box.lo.x || x > box.hi.x) break;
      const auto m = transverse_minimum(landscape, x, y, z);
      if (!m || !box.contains(*m)) break;
      y = m->y;
      z = m->z;
      s.push_back(axial_step * k);
      f.push_back(landscape.energy(*m));
    }
    paths.push_back(path_maximum(s, f));
  }

  bool any_interior = false;
  double escape = std::numeric_limits<double>::infinity();
  for (const auto& p : paths) {
    any_interior = any_interior || p.interior;
    escape = std::min(escape, p.value);
  }
  if (!any_interior)
    throw Error("no escape barrier found inside the domain box; enlarge the box");
  return std::max(0.0, escape - u0);
}

double trap_depth(const ChipLayout& layout, const ControlVector& ctrl, const SpeciesParams& species,
                  const TrapCharacterization& trap, const DomainBox& box) {
  const PotentialLandscape landscape(layout, ctrl, species);
  return trap_depth(landscape, trap, box);
}

namespace {

struct Extremum {
  std::size_t index;
  double x;
  double value;
};

TrapCharacterization profile_well(const AxialProfile& profile, const Extremum& e, double moment,
                                  double mass) {
  const auto& s = profile.samples;
  TrapCharacterization t;
  const double h = s[e.index + 1].x - s[e.index].x;
  const double curvature = (s[e.index - 1].Bmin - 2.0 * s[e.index].Bmin + s[e.index + 1].Bmin) / (h * h);
  t.position = {e.x, s[e.index].y, s[e.index].z};
  t.B0 = e.value;
  t.energy = moment * e.value;
  t.surface_distance = s[e.index].z;
  t.freqs = {std::sqrt(std::max(0.0, moment * curvature) / mass) / (2.0 * units::pi),
             std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  t.axes = {Vec3{1, 0, 0}, Vec3{0, 1, 0}, Vec3{0, 0, 1}};
  t.classification = t.B0 < kQuadrupoleThreshold ? TrapClass::QuadrupoleLike : TrapClass::IoffePritchard;
  return t;
}

}  // namespace

DoubleWell double_well(const AxialProfile& profile, const SpeciesParams& species) {
  const auto& s = profile.samples;
  std::vector<Extremum> minima;
  for (std::size_t i = 1; i + 1 < s.size(); ++i) {
    if (!s[i - 1].valid || !s[i].valid || !s[i + 1].valid) continue;
    if (s[i].Bmin < s[i - 1].Bmin && s[i].Bmin <= s[i + 1].Bmin) {
      double at = s[i].x;
      const double v = -parabolic_peak(s[i - 1].x, s[i].x, s[i + 1].x, -s[i - 1].Bmin, -s[i].Bmin,
                                       -s[i + 1].Bmin, &at);
      minima.push_back({i, at, v});
    }
  }
  if (minima.size() != 2) {
    std::string msg = "expected exactly two minima in the profile, found " + std::to_string(minima.size());
    if (!minima.empty()) {
      msg += " at x =";
      for (const auto& m : minima) msg += " " + std::to_string(m.x * 1e6) + " um";
    }
    throw MultiplicityError(msg);
  }
  std::size_t top = minima[0].index;
  for (std::size_t i = minima[0].index; i <= minima[1].index; ++i)
    if (s[i].Bmin > s[top].Bmin) top = i;
  double saddle_x = s[top].x;
  double saddle_b = s[top].Bmin;
  if (top > minima[0].index && top < minima[1].index)
    saddle_b = parabolic_peak(s[top - 1].x, s[top].x, s[top + 1].x, s[top - 1].Bmin, s[top].Bmin,
                              s[top + 1].Bmin, &saddle_x);

  const double moment = species.moment();
  DoubleWell dw;
  dw.left = profile_well(profile, minima[0], moment, species.mass);
  dw.right = profile_well(profile, minima[1], moment, species.mass);
  dw.saddle_x = saddle_x;
  dw.barrier = std::max(0.0, moment * (saddle_b - std::max(minima[0].value, minima[1].value)));
  dw.separation = minima[1].x - minima[0].x;
  return dw;
}

DoubleWell double_well(const ChipLayout& layout, const ControlVector& ctrl,
                       const SpeciesParams& species, const AxialProfile& profile) {
  DoubleWell dw = double_well(profile, species);
  const PotentialLandscape landscape(layout, ctrl, species);
  FindMinimumOptions opts;
  opts.trust_radius = 10e-6;
  opts.max_travel = 0.5 * dw.separation;
  dw.left = find_minimum(landscape, dw.left.position, opts);
  dw.right = find_minimum(landscape, dw.right.position, opts);
  return dw;
}

double BoltzmannWeight::value() const { return std::exp(log_z); }

namespace {

struct Slice {
  Vec3 min;
  double energy;
  double sigma_y;
  double sigma_z;
};

}  // namespace

BoltzmannWeight boltzmann_weight(const EnergyLandscape& landscape, const Basin& basin, double temperature) {
  if (!(temperature > 0.0)) throw InvalidParameter("temperature must be positive");
  if (!(basin.x_hi > basin.x_lo)) throw InvalidParameter("basin bounds must be increasing");
  const double kt = units::k_boltzmann * temperature;
  constexpr int kNodesX = 8;
  constexpr int kNodesT = 20;
  constexpr double kWindow = 8.0;
  const auto& gl_t = gauss_legendre(kNodesT);
  const auto& gl_x = gauss_legendre(kNodesX);

  // The transverse valley is followed from the basin centre outwards in both directions.
  auto evaluate = [&](int panels, double& u_ref, bool have_ref) -> double {
    const double width = (basin.x_hi - basin.x_lo) / panels;
    std::vector<double> xs;
    for (int p = 0; p < panels; ++p)
      for (int k = 0; k < kNodesX; ++k)
        xs.push_back(basin.x_lo + width * (p + 0.5 * (gl_x.nodes[k] + 1.0)));
    std::vector<Slice> slices(xs.size());
    const std::size_t mid = xs.size() / 2;
    auto solve_slice = [&](std::size_t i, double y, double z) {
      const auto m = transverse_minimum(landscape, xs[i], y, z);
      if (!m) throw NoConvergence("transverse valley lost inside the basin; basin is unbounded");
      const Mat3 H = landscape.hessian(*m);
      if (!(H[1][1] > 0.0) || !(H[2][2] > 0.0) || H[1][1] * H[2][2] - H[1][2] * H[1][2] <= 0.0)
        throw NoConvergence("transverse curvature not positive; basin is unbounded");
      Slice& s = slices[i];
      s.min = *m;
      s.energy = landscape.energy(*m);
      s.sigma_y = std::sqrt(kt / H[1][1]);
      s.sigma_z = std::sqrt(kt / H[2][2]);
    };
    solve_slice(mid, basin.seed_y, basin.seed_z);
    for (std::size_t i = mid + 1; i < xs.size(); ++i) solve_slice(i, slices[i - 1].min.y, slices[i - 1].min.z);
    for (std::size_t i = mid; i-- > 0;) solve_slice(i, slices[i + 1].min.y, slices[i + 1].min.z);
    if (!have_ref) {
      u_ref = slices[0].energy;
      for (const auto& s : slices) u_ref = std::min(u_ref, s.energy);
    }
    double total = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const Slice& s = slices[i];
      const double hy = kWindow * s.sigma_y;
      const double z_lo = std::max(1e-6, s.min.z - kWindow * s.sigma_z);
      const double z_hi = s.min.z + kWindow * s.sigma_z;
      double inner = 0.0;
      for (int a = 0; a < kNodesT; ++a) {
        const double y = s.min.y + hy * gl_t.nodes[a];
        for (int b = 0; b < kNodesT; ++b) {
          const double z = 0.5 * (z_lo + z_hi) + 0.5 * (z_hi - z_lo) * gl_t.nodes[b];
          const double u = landscape.energy({xs[i], y, z});
          inner += gl_t.weights[a] * gl_t.weights[b] * std::exp(-(u - u_ref) / kt);
        }
      }
      inner *= hy * 0.5 * (z_hi - z_lo);
      total += gl_x.weights[i % kNodesX] * 0.5 * width * inner;
    }
    return total;
  };

  double u_ref = 0.0;
  double coarse = evaluate(8, u_ref, false);
  for (int panels = 16; panels <= 256; panels *= 2) {
    const double fine = evaluate(panels, u_ref, true);
    const double rel = std::abs(fine - coarse) / fine;
    if (rel < 1e-4 || panels == 256) {
      if (!(fine > 0.0) || !std::isfinite(fine)) throw NoConvergence("Boltzmann integral is not finite");
      BoltzmannWeight w{std::log(fine) - u_ref / kt, rel};
      if (rel > 0.01) throw NoConvergence("Boltzmann integral did not converge to 1%");
      return w;
    }
    coarse = fine;
  }
  throw NoConvergence("Boltzmann integral did not converge");
}

BoltzmannWeight boltzmann_weight(const ChipLayout& layout, const ControlVector& ctrl,
                                 const SpeciesParams& species, const Basin& basin, double temperature) {
  const PotentialLandscape landscape(layout, ctrl, species);
  return boltzmann_weight(landscape, basin, temperature);
}

double ground_state_extension(double frequency, const SpeciesParams& species) {
  if (!(frequency > 0.0)) throw InvalidParameter("frequency must be positive");
  return std::sqrt(units::hbar / (species.mass * 2.0 * units::pi * frequency));
}

double chemical_potential_tf(double atom_number, double mean_frequency, double scattering_length,
                             const SpeciesParams& species) {
  if (!(atom_number >= 1.0)) throw InvalidParameter("atom number must be at least 1");
  if (!(mean_frequency > 0.0)) throw InvalidParameter("frequency must be positive");
  const double omega = 2.0 * units::pi * mean_frequency;
  const double a_ho = ground_state_extension(mean_frequency, species);
  return 0.5 * units::hbar * omega * std::pow(15.0 * atom_number * scattering_length / a_ho, 0.4);
}

double geometric_mean_frequency(const TrapCharacterization& trap) {
  return std::cbrt(trap.freqs[0] * trap.freqs[1] * trap.freqs[2]);
}

}  // namespace chiptrap
