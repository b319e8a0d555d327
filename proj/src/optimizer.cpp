#include "chiptrap/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include <Eigen/Dense>

#include "chiptrap/errors.hpp"

namespace chiptrap {

using json = nlohmann::json;

namespace {

int bias_index(const Knob& knob) {
  if (knob == "Bx") return 0;
  if (knob == "By") return 1;
  if (knob == "Bz") return 2;
  return -1;
}

double knob_step(const Knob& knob, const OptimizerOptions& o) {
  return is_bias_knob(knob) ? o.bias_step : o.current_step;
}

ControlVector with_knobs(ControlVector ctrl, const std::vector<Knob>& knobs, const Eigen::VectorXd& v) {
  for (std::size_t j = 0; j < knobs.size(); ++j) set_knob(ctrl, knobs[j], v(static_cast<Eigen::Index>(j)));
  return ctrl;
}

Eigen::VectorXd knob_vector(const ControlVector& ctrl, const std::vector<Knob>& knobs) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(knobs.size()));
  for (std::size_t j = 0; j < knobs.size(); ++j) v(static_cast<Eigen::Index>(j)) = knob_value(ctrl, knobs[j]);
  return v;
}

Eigen::VectorXd to_eigen(const std::vector<double>& r) {
  return Eigen::Map<const Eigen::VectorXd>(r.data(), static_cast<Eigen::Index>(r.size()));
}

double max_abs(const std::vector<double>& r) {
  double m = 0.0;
  for (double v : r) m = std::max(m, std::abs(v));
  return m;
}

// Trap search from `seed`, then once more from `fallback`.
std::optional<TrapCharacterization> locate(const ChipLayout& layout, const SpeciesParams& species,
                                           const ControlVector& ctrl, const Vec3& seed, const Vec3& fallback,
                                           const FindMinimumOptions& options, int& solves) {
  for (const Vec3& s : {seed, fallback}) {
    ++solves;
    try {
      return find_minimum(layout, ctrl, species, s, options);
    } catch (const Error&) {
    }
    if (norm(seed - fallback) == 0.0) break;
  }
  return std::nullopt;
}

// Central differences of the residuals with respect to each knob.
Eigen::MatrixXd jacobian(const ChipLayout& layout, const SpeciesParams& species, const TrapTarget& target,
                         const ControlVector& ctrl, const Vec3& seed, const OptimizerOptions& o,
                         double step_scale, int& solves) {
  const auto m = static_cast<Eigen::Index>(target.constraint_count());
  const auto n = static_cast<Eigen::Index>(target.free_knobs.size());
  Eigen::MatrixXd J(m, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const Knob& knob = target.free_knobs[static_cast<std::size_t>(j)];
    const double h = knob_step(knob, o) * step_scale;
    const double v = knob_value(ctrl, knob);
    ControlVector up = ctrl, down = ctrl;
    set_knob(up, knob, v + h);
    set_knob(down, knob, v - h);
    const auto tu = locate(layout, species, up, seed, target.seed, o.trap, solves);
    const auto td = locate(layout, species, down, seed, target.seed, o.trap, solves);
    if (!tu || !td) throw TrapError("trap lost while differentiating with respect to " + knob);
    const Eigen::VectorXd ru = to_eigen(target_residuals(target, *tu));
    const Eigen::VectorXd rd = to_eigen(target_residuals(target, *td));
    J.col(j) = (ru - rd) / (2.0 * h);
  }
  return J;
}

double parabolic_vertex(double x0, double x1, double x2, double f0, double f1, double f2, double* fv) {
  const double d = (x1 - x0) * (f1 - f2) - (x1 - x2) * (f1 - f0);
  if (d == 0.0) {
    if (fv) *fv = f1;
    return x1;
  }
  const double num = (x1 - x0) * (x1 - x0) * (f1 - f2) - (x1 - x2) * (x1 - x2) * (f1 - f0);
  double xv = x1 - 0.5 * num / d;
  xv = std::clamp(xv, std::min(x0, x2), std::max(x0, x2));
  if (fv) {
    // Lagrange form through the three samples
    const double l0 = (xv - x1) * (xv - x2) / ((x0 - x1) * (x0 - x2));
    const double l1 = (xv - x0) * (xv - x2) / ((x1 - x0) * (x1 - x2));
    const double l2 = (xv - x0) * (xv - x1) / ((x2 - x0) * (x2 - x1));
    *fv = l0 * f0 + l1 * f1 + l2 * f2;
  }
  return xv;
}

}  // namespace

bool is_bias_knob(const Knob& knob) { return bias_index(knob) >= 0; }

double knob_value(const ControlVector& ctrl, const Knob& knob) {
  const int b = bias_index(knob);
  return b >= 0 ? ctrl.bias[b] : ctrl.current(knob);
}

void set_knob(ControlVector& ctrl, const Knob& knob, double value) {
  const int b = bias_index(knob);
  if (b >= 0)
    ctrl.bias[b] = value;
  else
    ctrl.set(knob, value);
}

Vec3 axis_direction(Axis axis) {
  switch (axis) {
    case Axis::X: return {1, 0, 0};
    case Axis::Y: return {0, 1, 0};
    case Axis::Z: return {0, 0, 1};
  }
  return {};
}

std::string to_string(Axis axis) {
  switch (axis) {
    case Axis::X: return "x";
    case Axis::Y: return "y";
    case Axis::Z: return "z";
  }
  return "?";
}

Axis axis_from_string(const std::string& s) {
  if (s == "x") return Axis::X;
  if (s == "y") return Axis::Y;
  if (s == "z") return Axis::Z;
  throw InvalidParameter("unknown axis '" + s + "'");
}

void TrapTarget::validate() const {
  if (free_knobs.empty()) throw InvalidParameter("target has no free knobs");
  if (constraint_count() == 0) throw InvalidParameter("target has no constraints");
  if (x_target && !(x_tol > 0.0)) throw InvalidParameter("x tolerance must be positive");
  if (z_target && !(z_tol > 0.0)) throw InvalidParameter("z tolerance must be positive");
  for (const auto& f : freq_targets)
    if (!(f.tol > 0.0) || !(f.hz > 0.0)) throw InvalidParameter("frequency targets need positive value and tolerance");
  for (std::size_t i = 0; i < free_knobs.size(); ++i)
    for (std::size_t j = i + 1; j < free_knobs.size(); ++j)
      if (free_knobs[i] == free_knobs[j]) throw InvalidParameter("knob '" + free_knobs[i] + "' listed twice");
}

std::size_t TrapTarget::constraint_count() const {
  return (x_target ? 1 : 0) + (z_target ? 1 : 0) + freq_targets.size();
}

std::vector<double> target_residuals(const TrapTarget& target, const TrapCharacterization& trap) {
  std::vector<double> r;
  if (target.x_target) r.push_back((trap.position.x - *target.x_target) / target.x_tol);
  if (target.z_target) r.push_back((trap.position.z - *target.z_target) / target.z_tol);
  for (const auto& f : target.freq_targets)
    r.push_back((trap.frequency_along(axis_direction(f.axis)) - f.hz) / f.tol);
  return r;
}

std::vector<std::vector<double>> residual_jacobian(const ChipLayout& layout, const SpeciesParams& species,
                                                   const TrapTarget& target, const ControlVector& ctrl,
                                                   const Vec3& seed, const OptimizerOptions& options,
                                                   double step_scale) {
  target.validate();
  int solves = 0;
  const Eigen::MatrixXd J = jacobian(layout, species, target, ctrl, seed, options, step_scale, solves);
  std::vector<std::vector<double>> out(static_cast<std::size_t>(J.rows()));
  for (Eigen::Index i = 0; i < J.rows(); ++i)
    for (Eigen::Index j = 0; j < J.cols(); ++j) out[static_cast<std::size_t>(i)].push_back(J(i, j));
  return out;
}

SolveResult solve_target(const ChipLayout& layout, const SpeciesParams& species, const TrapTarget& target,
                         const ControlVector& init, const OptimizerOptions& options) {
  target.validate();
  init.validate();
  SolveResult res;
  res.ctrl = init;
  const auto first = locate(layout, species, init, target.seed, target.seed, options.trap, res.trap_solves);
  if (!first) throw TrapError("no trap found near the target seed at the initial controls");
  res.trap = *first;
  res.residuals = target_residuals(target, res.trap);
  double cost = to_eigen(res.residuals).squaredNorm();
  double lambda = options.initial_damping;
  const auto n = static_cast<Eigen::Index>(target.free_knobs.size());

  while (max_abs(res.residuals) >= options.residual_goal) {
    if (res.trap_solves + 2 * n + 1 > options.max_trap_solves) break;
    Eigen::MatrixXd J;
    try {
      J = jacobian(layout, species, target, res.ctrl, res.trap.position, options, 1.0, res.trap_solves);
    } catch (const TrapError&) {
      break;
    }
    const Eigen::VectorXd r = to_eigen(res.residuals);
    const Eigen::MatrixXd JtJ = J.transpose() * J;
    const Eigen::VectorXd g = J.transpose() * r;
    Eigen::VectorXd d = JtJ.diagonal();
    for (Eigen::Index j = 0; j < n; ++j) d(j) = std::max(d(j), 1e-12 * std::max(1.0, d.maxCoeff()));
    const Eigen::VectorXd x0 = knob_vector(res.ctrl, target.free_knobs);

    bool accepted = false;
    while (!accepted && lambda <= options.max_damping && res.trap_solves < options.max_trap_solves) {
      Eigen::MatrixXd A = JtJ;
      A.diagonal() += lambda * d;
      const Eigen::VectorXd step = A.ldlt().solve(-g);
      const ControlVector trial = with_knobs(res.ctrl, target.free_knobs, x0 + step);
      std::optional<TrapCharacterization> t;
      try {
        trial.validate();
        t = locate(layout, species, trial, res.trap.position, target.seed, options.trap, res.trap_solves);
      } catch (const InvalidParameter&) {
      }
      if (t) {
        const std::vector<double> rt = target_residuals(target, *t);
        const double ct = to_eigen(rt).squaredNorm();
        if (ct < cost) {
          res.ctrl = trial;
          res.trap = *t;
          res.residuals = rt;
          cost = ct;
          lambda = std::max(lambda / options.damping_decrease, 1e-12);
          accepted = true;
          break;
        }
      }
      lambda *= options.damping_increase;
    }
    if (!accepted) break;
  }
  res.converged = max_abs(res.residuals) < options.residual_goal;
  return res;
}

bool OptimizedSchedule::all_converged() const {
  return complete && std::all_of(knots.begin(), knots.end(), [](const OptimizedKnot& k) { return k.converged; });
}

Schedule OptimizedSchedule::schedule() const {
  if (knots.empty()) throw InvalidParameter("optimized schedule has no knots");
  std::vector<double> s;
  std::vector<ControlVector> v;
  for (const auto& k : knots) {
    s.push_back(k.s);
    v.push_back(k.ctrl);
  }
  const bool periodic = period.has_value() && knots.size() > 1;
  if (periodic) {
    s.push_back(knots.front().s + *period);
    v.push_back(knots.front().ctrl);
  }
  const int ord = s.size() >= 3 ? order : 1;
  return Schedule::table(variable, s, v, ord, periodic);
}

json trap_to_json(const TrapCharacterization& trap) {
  json axes = json::array();
  for (const auto& a : trap.axes) axes.push_back({a.x, a.y, a.z});
  json j = {{"position_m", {trap.position.x, trap.position.y, trap.position.z}},
            {"B0_T", trap.B0},
            {"energy_J", trap.energy},
            {"freqs_Hz", {trap.freqs[0], trap.freqs[1], trap.freqs[2]}},
            {"axes", axes},
            {"surface_distance_m", trap.surface_distance},
            {"classification", trap.classification == TrapClass::IoffePritchard ? "ioffe_pritchard" : "quadrupole_like"}};
  if (trap.depth) j["depth_J"] = *trap.depth;
  return j;
}

json OptimizedSchedule::report() const {
  json ks = json::array();
  double ny_lo = std::numeric_limits<double>::infinity();
  double ny_hi = -ny_lo;
  for (const auto& k : knots) {
    const double ny = k.trap.frequency_along({0, 1, 0});
    ny_lo = std::min(ny_lo, ny);
    ny_hi = std::max(ny_hi, ny);
    ks.push_back({{"s", k.s},
                  {"converged", k.converged},
                  {"trap_solves", k.trap_solves},
                  {"residuals", k.residuals},
                  {"control", control_to_json(k.ctrl)},
                  {"trap", trap_to_json(k.trap)}});
  }
  json j = {{"variable", to_string(variable)}, {"complete", complete}, {"all_converged", all_converged()},
            {"knots", ks}};
  if (!knots.empty()) j["nu_y_range_Hz"] = {ny_lo, ny_hi};
  if (!error.empty()) j["error"] = error;
  return j;
}

OptimizedSchedule sweep_schedule(const ChipLayout& layout, const SpeciesParams& species,
                                 const std::vector<SweepKnot>& knots, bool continuation,
                                 const OptimizerOptions& options, int threads) {
  OptimizedSchedule out;
  for (std::size_t i = 1; i < knots.size(); ++i)
    if (!(knots[i].s > knots[i - 1].s)) throw InvalidParameter("sweep knots must be strictly increasing");

  auto record = [](const SweepKnot& k, const SolveResult& r) {
    return OptimizedKnot{k.s, r.ctrl, r.trap, r.residuals, r.converged, r.trap_solves};
  };

  if (continuation || threads <= 1 || knots.size() < 2) {
    for (std::size_t i = 0; i < knots.size(); ++i) {
      SweepKnot k = knots[i];
      if (continuation && i > 0) {
        const OptimizedKnot& prev = out.knots.back();
        for (const auto& knob : k.target.free_knobs) set_knob(k.base, knob, knob_value(prev.ctrl, knob));
        k.target.seed = prev.trap.position;
      }
      try {
        out.knots.push_back(record(k, solve_target(layout, species, k.target, k.base, options)));
      } catch (const TrapError& e) {
        out.complete = false;
        out.error = "knot " + std::to_string(i) + ": " + e.what();
        break;
      }
    }
    return out;
  }

  std::vector<std::optional<OptimizedKnot>> solved(knots.size());
  std::vector<std::string> errors(knots.size());
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), knots.size());
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < knots.size(); i += workers) {
        try {
          solved[i] = record(knots[i], solve_target(layout, species, knots[i].target, knots[i].base, options));
        } catch (const Error& e) {
          errors[i] = e.what();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (std::size_t i = 0; i < knots.size(); ++i) {
    if (!solved[i]) {
      out.complete = false;
      out.error = "knot " + std::to_string(i) + ": " + errors[i];
      break;
    }
    out.knots.push_back(*solved[i]);
  }
  return out;
}

std::vector<TrapCharacterization> track_trap(const ChipLayout& layout, const SpeciesParams& species,
                                             const std::vector<ControlVector>& controls, const Vec3& seed,
                                             const FindMinimumOptions& options) {
  std::vector<TrapCharacterization> out;
  Vec3 p = seed;
  for (std::size_t i = 0; i < controls.size(); ++i) {
    try {
      out.push_back(find_minimum(layout, controls[i], species, p, options));
    } catch (const Error& e) {
      throw TrapError("trap lost at step " + std::to_string(i) + ": " + e.what());
    }
    p = out.back().position;
  }
  return out;
}

HeightOnlyResult optimize_height(const ChipLayout& layout, const SpeciesParams& species, const Schedule& schedule,
                                 const HeightOnlyOptions& options, const OptimizerOptions& lm) {
  if (options.knots < 1) throw InvalidParameter("height-only sweep needs at least one knot");
  if (schedule.variable() != ScheduleVariable::Phase)
    throw InvalidParameter("height-only sweep runs over a phase schedule");
  HeightOnlyResult res;
  std::vector<double> grid;
  std::vector<ControlVector> base;
  for (int k = 0; k < options.knots; ++k) {
    grid.push_back(2.0 * units::pi * k / options.knots);
    base.push_back(schedule.at(grid.back()));
  }
  res.reference = track_trap(layout, species, base, options.seed, lm.trap);
  if (options.z_ref) {
    res.z_ref = *options.z_ref;
  } else {
    double sum = 0.0;
    for (const auto& t : res.reference) sum += t.position.z;
    res.z_ref = sum / static_cast<double>(res.reference.size());
  }
  std::vector<SweepKnot> knots;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    SweepKnot k;
    k.s = grid[i];
    k.base = base[i];
    k.target.z_target = res.z_ref;
    k.target.z_tol = options.z_tol;
    k.target.free_knobs = {options.vary_bias_y ? Knob("By") : options.central_channel};
    k.target.seed = res.reference[i].position;
    knots.push_back(std::move(k));
  }
  res.optimized = sweep_schedule(layout, species, knots, true, lm);
  res.optimized.variable = ScheduleVariable::Phase;
  if (options.knots > 1) res.optimized.period = 2.0 * units::pi;
  return res;
}

ValleyExtrema valley_double_well(const EnergyLandscape& landscape, double x_lo, double x_hi, int samples,
                                 double seed_y, double seed_z) {
  if (samples < 5 || !(x_hi > x_lo)) throw InvalidParameter("valley window needs x_hi > x_lo and at least 5 samples");
  std::vector<double> xs(static_cast<std::size_t>(samples));
  std::vector<double> es(xs.size());
  std::vector<Vec3> pts(xs.size());
  // warm start from the centre outwards
  const std::size_t mid = xs.size() / 2;
  auto solve = [&](std::size_t i, double y, double z) {
    xs[i] = x_lo + (x_hi - x_lo) * static_cast<double>(i) / (samples - 1);
    auto m = transverse_minimum(landscape, xs[i], y, z);
    if (!m) m = transverse_minimum(landscape, xs[i], seed_y, seed_z);
    if (!m) throw NoConvergence("transverse valley lost along the double-well window");
    pts[i] = *m;
    es[i] = landscape.energy(*m);
  };
  solve(mid, seed_y, seed_z);
  for (std::size_t i = mid + 1; i < xs.size(); ++i) solve(i, pts[i - 1].y, pts[i - 1].z);
  for (std::size_t i = mid; i-- > 0;) solve(i, pts[i + 1].y, pts[i + 1].z);

  std::vector<std::size_t> minima, maxima;
  for (std::size_t i = 1; i + 1 < xs.size(); ++i) {
    if (es[i] < es[i - 1] && es[i] <= es[i + 1]) minima.push_back(i);
    if (es[i] > es[i - 1] && es[i] >= es[i + 1]) maxima.push_back(i);
  }
  if (minima.size() != 2)
    throw MultiplicityError("expected two wells in the window, found " + std::to_string(minima.size()));
  std::size_t saddle = minima[0];
  for (std::size_t i = minima[0]; i <= minima[1]; ++i)
    if (es[i] > es[saddle]) saddle = i;
  ValleyExtrema v;
  auto refine = [&](std::size_t i, double& x, double& e) {
    x = parabolic_vertex(xs[i - 1], xs[i], xs[i + 1], es[i - 1], es[i], es[i + 1], &e);
  };
  refine(minima[0], v.left_x, v.left_energy);
  refine(minima[1], v.right_x, v.right_energy);
  refine(saddle, v.saddle_x, v.saddle_energy);
  v.left_point = pts[minima[0]];
  v.right_point = pts[minima[1]];
  return v;
}

BalanceResult balance_double_well(const LandscapeFactory& factory, const std::vector<Knob>& free,
                                  const ControlVector& ctrl, double temperature, const BalanceOptions& o) {
  if (!(temperature > 0.0)) throw InvalidParameter("temperature must be positive");
  if (!(o.x_hi > o.x_lo)) throw InvalidParameter("balance window needs x_hi > x_lo");
  if (free.empty() || free.size() > 2) throw InvalidParameter("balance takes one or two knobs");

  struct Eval {
    ValleyExtrema wells;
    double log_ratio = 0.0;  // ln(Z_left / Z_right)
    double separation = 0.0;
  };
  BalanceResult res;
  auto evaluate = [&](const ControlVector& c) {
    ++res.evaluations;
    const auto land = factory(c);
    Eval e;
    e.wells = valley_double_well(*land, o.x_lo, o.x_hi, o.samples, o.seed_y, o.seed_z);
    const Basin left{o.x_lo, e.wells.saddle_x, e.wells.left_point.y, e.wells.left_point.z};
    const Basin right{e.wells.saddle_x, o.x_hi, e.wells.right_point.y, e.wells.right_point.z};
    const BoltzmannWeight wl = boltzmann_weight(*land, left, temperature);
    const BoltzmannWeight wr = boltzmann_weight(*land, right, temperature);
    if (!std::isfinite(wl.log_z) || !std::isfinite(wr.log_z)) throw NoConvergence("Boltzmann weights not computable");
    e.log_ratio = wl.log_z - wr.log_z;
    e.separation = e.wells.right_x - e.wells.left_x;
    return e;
  };

  const auto n = static_cast<Eigen::Index>(free.size());
  Eval cur = evaluate(ctrl);
  const double sep0 = cur.separation;
  auto residuals = [&](const Eval& e) {
    Eigen::VectorXd r(n);
    r(0) = e.log_ratio / std::log1p(o.weight_tol);
    if (n == 2) r(1) = (e.separation - sep0) / (o.separation_tol * sep0);
    return r;
  };
  ControlVector c = ctrl;
  Eigen::VectorXd r = residuals(cur);
  double lambda = o.initial_damping;
  // the separation constraint is met at the start, so converge on the weights with margin
  auto done = [&](const Eigen::VectorXd& v) { return std::abs(v(0)) < 0.5 && (n < 2 || std::abs(v(1)) < 1.0); };
  while (!done(r) && res.evaluations + 2 * n + 1 <= o.max_evaluations) {
    Eigen::MatrixXd J(n, n);
    bool lost = false;
    for (Eigen::Index j = 0; j < n; ++j) {
      const Knob& k = free[static_cast<std::size_t>(j)];
      ControlVector up = c, down = c;
      set_knob(up, k, knob_value(c, k) + o.current_step);
      set_knob(down, k, knob_value(c, k) - o.current_step);
      try {
        J.col(j) = (residuals(evaluate(up)) - residuals(evaluate(down))) / (2.0 * o.current_step);
      } catch (const Error&) {
        lost = true;
      }
    }
    if (lost) break;
    const Eigen::MatrixXd JtJ = J.transpose() * J;
    const Eigen::VectorXd g = J.transpose() * r;
    bool accepted = false;
    while (!accepted && lambda < 1e10 && res.evaluations < o.max_evaluations) {
      Eigen::MatrixXd A = JtJ;
      A.diagonal() += lambda * JtJ.diagonal().cwiseMax(1e-12);
      const Eigen::VectorXd step = A.ldlt().solve(-g);
      ControlVector trial = c;
      for (Eigen::Index j = 0; j < n; ++j) {
        const Knob& k = free[static_cast<std::size_t>(j)];
        set_knob(trial, k, knob_value(c, k) + step(j));
      }
      try {
        const Eval e = evaluate(trial);
        const Eigen::VectorXd rt = residuals(e);
        if (rt.squaredNorm() < r.squaredNorm()) {
          c = trial;
          cur = e;
          r = rt;
          lambda = std::max(lambda / 3.0, 1e-12);
          accepted = true;
          break;
        }
      } catch (const Error&) {
      }
      lambda *= 10.0;
    }
    if (!accepted) break;
  }
  res.ctrl = c;
  res.wells = cur.wells;
  res.separation = cur.separation;
  res.left_fraction = 1.0 / (1.0 + std::exp(-cur.log_ratio));
  res.converged = done(r);
  return res;
}

BalanceResult balance_double_well(const ChipLayout& layout, const SpeciesParams& species,
                                  const std::vector<Knob>& free, const ControlVector& ctrl, double temperature,
                                  const BalanceOptions& options) {
  const LandscapeFactory factory = [&](const ControlVector& c) -> std::unique_ptr<EnergyLandscape> {
    return std::make_unique<PotentialLandscape>(layout, c, species);
  };
  return balance_double_well(factory, free, ctrl, temperature, options);
}

MergeBalance balance_merge_schedule(const ChipLayout& layout, const SpeciesParams& species,
                                    const MergeBalanceOptions& o) {
  if (o.knots < 2 || !(o.phi_hi > o.phi_lo)) throw InvalidParameter("merge balance needs two knots and phi_hi > phi_lo");
  const Schedule formula = merge_schedule(o.conveyor);
  MergeBalance out{formula, {}, {}, {}};
  Vec3 incoming = o.seed;
  std::vector<std::optional<double>> found;
  double last_offset = 0.0;
  for (int k = 0; k < o.knots; ++k) {
    const double phi = o.phi_lo + (o.phi_hi - o.phi_lo) * k / (o.knots - 1);
    out.phis.push_back(phi);
    ControlVector c = formula.at(phi);
    std::optional<double> offset;
    try {
      incoming = find_minimum(layout, c, species, incoming).position;
      if (incoming.x < o.merged_x) {
        BalanceOptions bo;
        bo.x_lo = incoming.x - o.window_margin;
        bo.x_hi = o.window_hi;
        bo.seed_y = incoming.y;
        bo.seed_z = incoming.z;
        set_knob(c, o.knob, knob_value(c, o.knob) + last_offset);
        const BalanceResult r = balance_double_well(layout, species, {o.knob}, c, o.temperature, bo);
        if (r.converged) offset = knob_value(r.ctrl, o.knob) - knob_value(formula.at(phi), o.knob);
      }
    } catch (const Error&) {
    }
    if (offset) last_offset = *offset;
    found.push_back(offset);
  }
  // carry the nearest balanced offset into unresolved knots
  std::vector<ControlVector> values;
  for (std::size_t i = 0; i < found.size(); ++i) {
    std::optional<double> v = found[i];
    for (std::size_t d = 1; !v && d < found.size(); ++d) {
      if (i >= d && found[i - d]) v = found[i - d];
      else if (i + d < found.size() && found[i + d]) v = found[i + d];
    }
    if (!v) throw NoConvergence("no phase with a balanceable double well");
    out.offsets.push_back(*v);
    out.balanced.push_back(found[i].has_value());
    ControlVector c = formula.at(out.phis[i]);
    set_knob(c, o.knob, knob_value(c, o.knob) + *v);
    values.push_back(c);
  }
  out.schedule = Schedule::table(ScheduleVariable::Phase, out.phis, values, 3);
  return out;
}

}  // namespace chiptrap
