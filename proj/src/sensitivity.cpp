#include "chiptrap/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <cstdio>
#include <ostream>
#include <random>
#include <thread>

#include <json.hpp>

#include "chiptrap/dynamics.hpp"
#include "chiptrap/errors.hpp"
#include "chiptrap/units.hpp"

namespace chiptrap {

NoiseModel NoiseModel::currents_only(double rel) {
  NoiseModel n;
  n.current_rel = rel;
  return n;
}

NoiseModel NoiseModel::with_ambient(double rel) {
  NoiseModel n;
  n.current_rel = rel;
  const double mg = units::milligauss;
  n.ambient_field = {mg, mg, mg};
  n.ambient_gradient = mg / 1e-2;
  return n;
}

FindMinimumOptions SensitivityOptions::tight_refind() {
  FindMinimumOptions o;
  o.position_tolerance = 1e-15;
  o.gradient_tolerance = 1e-24;
  o.max_travel = 20e-6;
  return o;
}

namespace {

// Runs f(i) for i in [0, n) on up to `threads` workers; results are stored by index.
template <class T>
std::vector<T> parallel_map(std::size_t n, int threads, const std::function<T(std::size_t)>& f) {
  std::vector<T> out(n);
  const std::size_t workers = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), 1, std::max<std::size_t>(n, 1));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(i);
    return out;
  }
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) out[i] = f(i);
    });
  for (auto& t : pool) t.join();
  return out;
}

std::optional<Vec3> refind(const ChipLayout& layout, const ControlVector& ctrl, const SpeciesParams& species,
                           const Vec3& seed, const FindMinimumOptions& o) {
  try {
    return find_minimum(layout, ctrl, species, seed, o).position;
  } catch (const Error&) {
    return std::nullopt;
  }
}

// One perturbation direction applied with signed amplitude.
using Perturb = std::function<void(ControlVector&, double)>;

struct Knob {
  std::string name;
  double step;
  Perturb apply;
};

Vec3 hypot3(const Vec3& a, const Vec3& b) {
  return {std::hypot(a.x, b.x), std::hypot(a.y, b.y), std::hypot(a.z, b.z)};
}

Vec3 scaled_abs(const Vec3& v, double s) { return {std::abs(v.x * s), std::abs(v.y * s), std::abs(v.z * s)}; }

}  // namespace

JitterBudget linear_response(const ChipLayout& layout, const ControlVector& ctrl, const SpeciesParams& species,
                             const TrapCharacterization& trap, const NoiseModel& noise,
                             const SensitivityOptions& options) {
  if (!(noise.current_rel >= 0.0) || !(noise.ambient_gradient >= 0.0) || !(noise.ambient_field.x >= 0.0) ||
      !(noise.ambient_field.y >= 0.0) || !(noise.ambient_field.z >= 0.0))
    throw InvalidParameter("noise sigmas must be non-negative");
  if (!(options.current_rel_step > 0.0) || !(options.field_step > 0.0) || !(options.gradient_step > 0.0))
    throw InvalidParameter("perturbation steps must be positive");
  ctrl.validate();

  std::vector<Knob> knobs;
  for (const auto& ch : layout.channels()) {
    const double step = options.current_rel_step * std::max(std::abs(ctrl.current(ch)), 1.0);
    knobs.push_back({ch, step, [ch](ControlVector& c, double d) { c.set(ch, c.current(ch) + d); }});
  }
  for (int j = 0; j < 3; ++j)
    knobs.push_back({std::string("B") + "xyz"[j], options.field_step,
                     [j](ControlVector& c, double d) { c.bias[j] += d; }});
  knobs.push_back({"dBx/dx", options.gradient_step, [](ControlVector& c, double d) {
                     c.gradient += axial_gradient(d);
                   }});

  const std::function<std::optional<Vec3>(std::size_t)> solve = [&](std::size_t i) -> std::optional<Vec3> {
    const Knob& k = knobs[i / 2];
    ControlVector c = ctrl;
    k.apply(c, i % 2 == 0 ? k.step : -k.step);
    return refind(layout, c, species, trap.position, options.refind);
  };
  const auto solved = parallel_map<std::optional<Vec3>>(2 * knobs.size(), options.threads, solve);

  JitterBudget b;
  b.position = trap.position;
  b.noise = noise;
  std::vector<Vec3> response(knobs.size());
  for (std::size_t k = 0; k < knobs.size(); ++k) {
    if (!solved[2 * k] || !solved[2 * k + 1]) {
      b.nonlinear = true;
      b.notes.push_back("trap lost under perturbation of " + knobs[k].name);
      continue;
    }
    response[k] = (*solved[2 * k] - *solved[2 * k + 1]) / (2.0 * knobs[k].step);
  }

  const std::size_t nch = layout.channels().size();
  for (std::size_t k = 0; k < nch; ++k) {
    const ChannelId& ch = layout.channels()[k];
    const double amps = ctrl.current(ch);
    b.dpos_dI.push_back({ch, amps, response[k]});
    b.rms_current = hypot3(b.rms_current, scaled_abs(response[k], noise.current_rel * amps));
  }
  for (int j = 0; j < 3; ++j) {
    const Vec3& r = response[nch + j];
    for (int i = 0; i < 3; ++i) b.dpos_dB[i][j] = r[i];
    b.rms_current = hypot3(b.rms_current, scaled_abs(r, noise.current_rel * ctrl.bias[j]));
    b.rms_field = hypot3(b.rms_field, scaled_abs(r, noise.ambient_field[j]));
  }
  b.dpos_dgrad = response[nch + 3];
  b.rms_gradient = scaled_abs(b.dpos_dgrad, noise.ambient_gradient);
  b.rms = hypot3(hypot3(b.rms_current, b.rms_field), b.rms_gradient);
  return b;
}

MonteCarloJitter monte_carlo_jitter(const ChipLayout& layout, const ControlVector& ctrl,
                                    const SpeciesParams& species, const TrapCharacterization& trap,
                                    const NoiseModel& noise, std::size_t n_samples, std::uint64_t seed,
                                    const SensitivityOptions& options, int bins) {
  if (n_samples < 100) throw InvalidParameter("monte_carlo_jitter needs at least 100 samples");
  if (bins < 1) throw InvalidParameter("histogram needs at least one bin");
  ctrl.validate();

  const std::function<std::optional<Vec3>(std::size_t)> sample = [&](std::size_t i) -> std::optional<Vec3> {
    auto rng = make_rng(seed, i);
    std::normal_distribution<double> n01(0.0, 1.0);
    ControlVector c = ctrl;
    for (auto& [ch, amps] : c.currents) amps *= 1.0 + noise.current_rel * n01(rng);
    for (int j = 0; j < 3; ++j) c.bias[j] *= 1.0 + noise.current_rel * n01(rng);
    for (int j = 0; j < 3; ++j) c.bias[j] += noise.ambient_field[j] * n01(rng);
    c.gradient += axial_gradient(noise.ambient_gradient * n01(rng));
    const auto p = refind(layout, c, species, trap.position, options.refind);
    if (!p) return std::nullopt;
    return *p - trap.position;
  };
  const auto drawn = parallel_map<std::optional<Vec3>>(n_samples, options.threads, sample);

  MonteCarloJitter mc;
  mc.samples = n_samples;
  std::vector<Vec3> d;
  for (const auto& s : drawn) {
    if (s)
      d.push_back(*s);
    else
      ++mc.lost;
  }
  if (d.empty()) throw TrapError("trap lost in every Monte Carlo sample");

  const auto rms_of = [&](const std::vector<std::size_t>* idx) {
    Vec3 sq;
    const std::size_t n = idx ? idx->size() : d.size();
    for (std::size_t k = 0; k < n; ++k) {
      const Vec3& v = d[idx ? (*idx)[k] : k];
      sq += Vec3{v.x * v.x, v.y * v.y, v.z * v.z};
    }
    sq = sq / static_cast<double>(n);
    return Vec3{std::sqrt(sq.x), std::sqrt(sq.y), std::sqrt(sq.z)};
  };
  mc.rms = rms_of(nullptr);
  for (const Vec3& v : d) mc.mean += v / static_cast<double>(d.size());

  // Bootstrap standard error of the rms on a stream no sample uses.
  constexpr int kResamples = 200;
  auto rng = make_rng(seed, ~std::uint64_t{0});
  std::uniform_int_distribution<std::size_t> pick(0, d.size() - 1);
  std::vector<std::size_t> idx(d.size());
  Vec3 s1, s2;
  for (int r = 0; r < kResamples; ++r) {
    for (auto& k : idx) k = pick(rng);
    const Vec3 v = rms_of(&idx);
    s1 += v;
    s2 += Vec3{v.x * v.x, v.y * v.y, v.z * v.z};
  }
  s1 = s1 / double(kResamples);
  s2 = s2 / double(kResamples);
  mc.rms_error = {std::sqrt(std::max(0.0, s2.x - s1.x * s1.x)), std::sqrt(std::max(0.0, s2.y - s1.y * s1.y)),
                  std::sqrt(std::max(0.0, s2.z - s1.z * s1.z))};

  for (int a = 0; a < 3; ++a) {
    Histogram& h = mc.histograms[a];
    h.lo = h.hi = d[0][a];
    for (const Vec3& v : d) {
      h.lo = std::min(h.lo, v[a]);
      h.hi = std::max(h.hi, v[a]);
    }
    if (h.hi == h.lo) {
      h.lo -= 0.5e-12;
      h.hi += 0.5e-12;
    }
    h.counts.assign(static_cast<std::size_t>(bins), 0);
    for (const Vec3& v : d) {
      const double u = (v[a] - h.lo) / (h.hi - h.lo);
      ++h.counts[std::min<std::size_t>(static_cast<std::size_t>(u * bins), bins - 1)];
    }
  }
  return mc;
}

namespace {

nlohmann::json vec_json(const Vec3& v) { return nlohmann::json::array({v.x, v.y, v.z}); }

}  // namespace

std::string budget_json(const JitterBudget& b, const MonteCarloJitter* mc) {
  using nlohmann::json;
  json j;
  j["position_m"] = vec_json(b.position);
  json ch = json::array();
  for (const auto& r : b.dpos_dI) ch.push_back({{"channel", r.channel}, {"current_A", r.current}, {"dpos_dI_m_per_A", vec_json(r.dpos)}});
  j["channels"] = ch;
  json db = json::array();
  for (int i = 0; i < 3; ++i) db.push_back(json::array({b.dpos_dB[i][0], b.dpos_dB[i][1], b.dpos_dB[i][2]}));
  j["dpos_dB_m_per_T"] = db;
  j["dpos_dgradx_m_per_T_per_m"] = vec_json(b.dpos_dgrad);
  j["noise"] = {{"current_rel", b.noise.current_rel},
                {"ambient_field_T", vec_json(b.noise.ambient_field)},
                {"ambient_gradient_T_per_m", b.noise.ambient_gradient}};
  j["rms_current_m"] = vec_json(b.rms_current);
  j["rms_field_m"] = vec_json(b.rms_field);
  j["rms_gradient_m"] = vec_json(b.rms_gradient);
  j["rms_m"] = vec_json(b.rms);
  j["nonlinear"] = b.nonlinear;
  j["notes"] = b.notes;
  if (mc) {
    j["monte_carlo"] = {{"samples", mc->samples},
                        {"lost", mc->lost},
                        {"rms_m", vec_json(mc->rms)},
                        {"rms_error_m", vec_json(mc->rms_error)},
                        {"mean_m", vec_json(mc->mean)}};
  }
  return j.dump(2);
}

void write_histogram_csv(std::ostream& out, const MonteCarloJitter& mc) {
  out << "bin,x_center_m,count_x,y_center_m,count_y,z_center_m,count_z\n";
  const std::size_t n = mc.histograms[0].counts.size();
  char buf[64];
  for (std::size_t i = 0; i < n; ++i) {
    out << i;
    for (const Histogram& h : mc.histograms) {
      const double w = (h.hi - h.lo) / static_cast<double>(n);
      std::snprintf(buf, sizeof buf, "%.9e", h.lo + (static_cast<double>(i) + 0.5) * w);
      out << ',' << buf << ',' << h.counts[i];
    }
    out << '\n';
  }
}

}  // namespace chiptrap
