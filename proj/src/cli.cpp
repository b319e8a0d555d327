#include "chiptrap/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "chiptrap/errors.hpp"
#include "chiptrap/frames.hpp"
#include "chiptrap/log.hpp"
#include "chiptrap/scenario.hpp"

namespace chiptrap {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Context {
  const RunOptions& opt;
  Scenario sc;
  ChipLayout layout;
  std::ostream& out;
  fs::path dir;
};

// Thrown by commands that finished with incomplete results.
struct Partial {
  std::string why;
};

std::string fmt(double v, int digits = 9) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
  log(LogLevel::Info, "wrote " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

template <class T>
const T& require_section(const std::optional<T>& s, const char* name) {
  if (!s) throw ParseError(std::string("/") + name, "section required by this command is missing");
  return *s;
}

std::pair<double, double> schedule_span(const Schedule& s) {
  if (std::isfinite(s.lo()) && std::isfinite(s.hi())) return {s.lo(), s.hi()};
  if (s.variable() == ScheduleVariable::Fraction) return {0.0, 1.0};
  return {0.0, 2.0 * units::pi};
}

ControlVector control_at(const Schedule& s, const Instant& at) {
  if (at.variable != s.variable() && !(s.form() == "constant"))
    throw ParseError("/at", "instant is a " + to_string(at.variable) + " but the schedule is parameterized by " +
                                to_string(s.variable()));
  return s.at(at.value);
}

std::vector<TrapCharacterization> traps_on_grid(const Context& c, const ControlVector& ctrl, const AnalyzeConfig& a) {
  std::vector<TrapCharacterization> found;
  const int n = static_cast<int>(std::floor((a.x_hi - a.x_lo) / a.x_step + 1e-9)) + 1;
  for (int i = 0; i < n; ++i)
    for (double z : a.z_seeds) {
      try {
        const auto t = find_minimum(c.layout, ctrl, c.sc.species, {a.x_lo + i * a.x_step, 0.0, z});
        const bool dup = std::any_of(found.begin(), found.end(),
                                     [&](const TrapCharacterization& f) { return norm(f.position - t.position) < 2e-6; });
        if (!dup) found.push_back(t);
      } catch (const Error&) {
      }
    }
  std::sort(found.begin(), found.end(),
            [](const TrapCharacterization& l, const TrapCharacterization& r) { return l.position.x < r.position.x; });
  return found;
}

int cmd_analyze(Context& c) {
  const auto& a = require_section(c.sc.analyze, "analyze");
  const Schedule schedule = build_schedule(c.sc, c.layout, c.opt.threads);
  json report = {{"scenario", c.sc.name}, {"instants", json::array()}};
  bool any_empty = false;
  c.out << std::left << std::setw(10) << "instant" << std::setw(11) << "x[um]" << std::setw(10) << "y[um]"
        << std::setw(10) << "z[um]" << std::setw(10) << "B0[G]" << std::setw(10) << "nu1[Hz]" << std::setw(10)
        << "nu2[Hz]" << std::setw(10) << "nu3[Hz]" << "class\n";
  for (const Instant& at : a.at) {
    const ControlVector ctrl = control_at(schedule, at);
    auto traps = traps_on_grid(c, ctrl, a);
    json list = json::array();
    for (auto& t : traps) {
      if (a.depth) {
        try {
          t.depth = trap_depth(c.layout, ctrl, c.sc.species, t);
        } catch (const Error&) {
        }
      }
      json tj = trap_to_json(t);
      if (t.depth) tj["depth_uK"] = *t.depth / units::k_boltzmann / units::microkelvin;
      list.push_back(tj);
      c.out << std::setw(10) << fmt(at.value, 5) << std::setw(11) << fmt(t.position.x * 1e6, 6) << std::setw(10)
            << fmt(t.position.y * 1e6, 5) << std::setw(10) << fmt(t.position.z * 1e6, 5) << std::setw(10)
            << fmt(t.B0 / units::gauss, 4) << std::setw(10) << fmt(t.freqs[0], 5) << std::setw(10)
            << fmt(t.freqs[1], 5) << std::setw(10) << fmt(t.freqs[2], 5)
            << (t.classification == TrapClass::IoffePritchard ? "IP" : "quadrupole") << "\n";
    }
    if (traps.empty()) {
      any_empty = true;
      c.out << std::setw(10) << fmt(at.value, 5) << "no trap\n";
    }
    report["instants"].push_back({{"variable", to_string(at.variable)}, {"value", at.value}, {"traps", list}});
  }
  write_json(c.dir / "analyze.json", report);
  return any_empty ? kExitNoTrap : kExitOk;
}

int cmd_profile(Context& c) {
  const auto& p = require_section(c.sc.profile, "profile");
  const Schedule schedule = build_schedule(c.sc, c.layout, c.opt.threads);
  std::vector<AxialProfile> profiles;
  for (const Instant& at : p.at)
    profiles.push_back(axial_profile(c.layout, control_at(schedule, at), p.x_lo, p.x_hi, p.samples, 0.0, p.seed_z,
                                     c.opt.threads));
  std::ostringstream csv;
  csv << "x_m";
  for (std::size_t k = 0; k < p.at.size(); ++k)
    csv << ",Bmin_T_" << k << ",y_m_" << k << ",z_m_" << k << ",valid_" << k;
  csv << "\n";
  for (int i = 0; i < p.samples; ++i) {
    csv << fmt(profiles[0].samples[i].x);
    for (const auto& pr : profiles) {
      const auto& s = pr.samples[i];
      csv << ',' << fmt(s.Bmin) << ',' << fmt(s.y) << ',' << fmt(s.z) << ',' << (s.valid ? 1 : 0);
    }
    csv << "\n";
  }
  write_text(c.dir / "profile.csv", csv.str());
  const auto [lo, hi] = schedule_span(schedule);
  write_text(c.dir / "schedule.csv", schedule_csv(schedule, lo, hi, p.schedule_samples));
  bool complete = true;
  for (std::size_t k = 0; k < profiles.size(); ++k) {
    complete = complete && profiles[k].complete();
    c.out << "instant " << fmt(p.at[k].value, 5) << ": " << (profiles[k].complete() ? "complete" : "has gaps") << "\n";
  }
  if (!complete) throw Partial{"profile has gaps where the transverse search diverged"};
  return kExitOk;
}

double peak_to_peak_z(const std::vector<TrapCharacterization>& traps) {
  double lo = 1e9, hi = -1e9;
  for (const auto& t : traps) {
    lo = std::min(lo, t.position.z);
    hi = std::max(hi, t.position.z);
  }
  return traps.empty() ? 0.0 : hi - lo;
}

int cmd_optimize(Context& c) {
  const auto& o = require_section(c.sc.optimize, "optimize");
  const Schedule schedule = build_schedule(c.sc, c.layout, c.opt.threads);
  if (o.mode == "merge_balance") {
    MergeBalanceOptions m;
    m.temperature = o.temperature;
    m.knots = o.knots;
    const ControlVector c0 = schedule.at(0.0);
    m.conveyor.bias = c0.bias;
    m.conveyor.central_current = c0.current(m.conveyor.central_channel);
    const MergeBalance mb = balance_merge_schedule(c.layout, c.sc.species, m);
    write_json(c.dir / "schedule.json", mb.schedule.to_json());
    write_text(c.dir / "schedule.csv", schedule_csv(mb.schedule, mb.schedule.lo(), mb.schedule.hi(), 65));
    json rep = {{"phis", mb.phis}, {"offsets_A", mb.offsets}, {"balanced", mb.balanced}};
    write_json(c.dir / "report.json", rep);
    const auto n = std::count(mb.balanced.begin(), mb.balanced.end(), true);
    c.out << "balanced " << n << " of " << mb.balanced.size() << " knots\n";
    return kExitOk;
  }
  OptimizedSchedule opt;
  json extra;
  if (o.mode == "height") {
    HeightOnlyOptions h;
    h.knots = o.knots;
    h.vary_bias_y = o.knob == "By";
    h.z_ref = o.z_ref;
    h.z_tol = o.z_tol;
    h.seed = o.trap_seed;
    const HeightOnlyResult r = optimize_height(c.layout, c.sc.species, schedule, h);
    opt = r.optimized;
    std::vector<TrapCharacterization> achieved;
    for (const auto& k : opt.knots) achieved.push_back(k.trap);
    extra = {{"z_ref_m", r.z_ref},
             {"peak_to_peak_z_reference_m", peak_to_peak_z(r.reference)},
             {"peak_to_peak_z_optimized_m", peak_to_peak_z(achieved)}};
    c.out << "z peak-to-peak: " << fmt(peak_to_peak_z(r.reference) * 1e6, 4) << " um before, "
          << fmt(peak_to_peak_z(achieved) * 1e6, 4) << " um after\n";
  } else {
    const auto start = find_minimum(c.layout, schedule.at(0.0), c.sc.species, o.trap_seed);
    std::vector<SweepKnot> knots;
    for (int k = 0; k < o.knots; ++k) {
      const double phi = 2.0 * units::pi * k / o.knots;
      const double x = start.position.x + o.period * phi / (2.0 * units::pi);
      TrapTarget t;
      t.x_target = x;
      t.x_tol = o.x_tol;
      t.z_target = o.z;
      t.z_tol = o.z_tol;
      t.freq_targets = {{Axis::X, o.nu_x, o.nu_x_tol}, {Axis::Z, o.nu_z, o.nu_z_tol}};
      t.free_knobs = o.free_knobs;
      t.seed = {x, 0.0, o.z};
      knots.push_back({phi, schedule.at(phi), t});
    }
    opt = sweep_schedule(c.layout, c.sc.species, knots, true, {}, c.opt.threads);
    opt.period = 2.0 * units::pi;
  }
  json rep = opt.report();
  for (auto& [k, v] : extra.items()) rep[k] = v;
  write_json(c.dir / "report.json", rep);
  if (!opt.knots.empty()) {
    const Schedule table = opt.schedule();
    write_json(c.dir / "schedule.json", table.to_json());
    write_text(c.dir / "schedule.csv", schedule_csv(table, 0.0, 2.0 * units::pi, 65));
  }
  c.out << "knots solved: " << opt.knots.size() << ", all converged: " << (opt.all_converged() ? "yes" : "no") << "\n";
  if (!opt.complete || !opt.all_converged()) throw Partial{opt.error.empty() ? "not every knot converged" : opt.error};
  return kExitOk;
}

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t k) {
  std::uint64_t s = seed ^ (0x9e3779b97f4a7c15ULL * (k + 1));
  return splitmix64(s);
}

EnsembleState load_clouds(const Context& c, const ControlVector& ctrl0, const EnsembleConfig& e) {
  EnsembleState all;
  all.mass = c.sc.species.mass;
  for (std::size_t k = 0; k < e.clouds.size(); ++k) {
    const CloudConfig& cl = e.clouds[k];
    if (cl.atoms == 0) continue;
    const auto trap = find_minimum(c.layout, ctrl0, c.sc.species, cl.position);
    SamplingOptions so;
    so.x_lo = cl.x_lo;
    so.x_hi = cl.x_hi;
    so.box = e.box;
    const EnsembleState s =
        sample_thermal(c.layout, ctrl0, c.sc.species, trap, cl.temperature, cl.atoms, stream_seed(c.sc.seed, k), so);
    all.positions.insert(all.positions.end(), s.positions.begin(), s.positions.end());
    all.velocities.insert(all.velocities.end(), s.velocities.begin(), s.velocities.end());
    all.alive.insert(all.alive.end(), s.alive.begin(), s.alive.end());
    all.majorana.insert(all.majorana.end(), s.majorana.begin(), s.majorana.end());
  }
  return all;
}

PropagateOptions ensemble_options(const Context& c, const ControlProgram& program, const EnsembleConfig& e) {
  PropagateOptions po;
  if (e.nu_max) {
    po.nu_max = *e.nu_max;
  } else {
    for (const auto& cl : e.clouds)
      po.nu_max = std::max(po.nu_max, max_trap_frequency(c.layout, c.sc.species, program, cl.position, 32));
  }
  if (!(po.nu_max > 0.0)) throw ParseError("/nu_max", "needed when no cloud defines a trap to follow");
  po.dt = e.dt > 0.0 ? e.dt : 1.0 / (e.steps_per_period * po.nu_max);
  po.box = e.box;
  po.snapshot_interval = e.snapshot_interval;
  po.threads = c.opt.threads;
  return po;
}

json temps_json(const std::array<double, 3>& t) { return json::array({t[0], t[1], t[2]}); }

int cmd_simulate(Context& c) {
  const auto& m = require_section(c.sc.simulate, "simulate");
  const int threads = c.opt.threads;
  if (m.experiment == "ensemble") {
    const Schedule schedule = build_schedule(c.sc, c.layout, threads);
    const ControlProgram program = build_program(schedule, m.ensemble);
    const EnsembleState state = load_clouds(c, program.at(0.0), m.ensemble);
    const ChipPotential pot(c.layout, c.sc.species, program);
    const PropagateOptions po = ensemble_options(c, program, m.ensemble);
    const Trajectory tr = propagate(state, pot, program.duration, po);
    write_text(c.dir / "observables.csv", observables_csv(tr.snapshots));
    write_phase_space(tr.final_state, c.dir / "final_state.bin");
    const Observables& last = tr.snapshots.back();
    write_json(c.dir / "summary.json", {{"atoms", state.size()},
                                        {"nu_max_Hz", po.nu_max},
                                        {"dt_s", tr.dt},
                                        {"steps", tr.steps},
                                        {"duration_s", program.duration},
                                        {"final_temperature_K", temps_json(last.temperature)},
                                        {"loss_fraction", last.loss_fraction},
                                        {"majorana_fraction", last.majorana_fraction}});
    c.out << "propagated " << state.size() << " atoms for " << fmt(program.duration, 6) << " s in " << tr.steps
          << " steps; loss " << fmt(last.loss_fraction, 4) << "\n";
    return kExitOk;
  }
  if (m.experiment == "transport") {
    const Schedule schedule = build_schedule(c.sc, c.layout, threads);
    HeatingParams hp;
    hp.temperature = m.temperature;
    hp.atoms = m.atoms;
    hp.seed = c.sc.seed;
    if (m.trap_seed) hp.trap_seed = *m.trap_seed;
    hp.threads = threads;
    hp.steps_per_period = m.ensemble.steps_per_period;
    const TransportHeating th = transport_heating(c.layout, c.sc.species, schedule, {*c.sc.phase_law}, hp);
    const TransportRun& r = th.runs.front();
    write_json(c.dir / "transport.json", {{"before_K", temps_json(th.before)},
                                          {"delta_T_K", temps_json(r.delta_t)},
                                          {"loss_fraction", r.loss_fraction},
                                          {"duration_s", r.duration}});
    c.out << "heating dT = (" << fmt(r.delta_t[0] * 1e6, 4) << ", " << fmt(r.delta_t[1] * 1e6, 4) << ", "
          << fmt(r.delta_t[2] * 1e6, 4) << ") uK over " << fmt(r.duration, 5) << " s\n";
    return kExitOk;
  }
  if (m.experiment == "split_merge") {
    SplitMergeParams sp;
    sp.schedule = build_schedule(c.sc, c.layout, threads);
    sp.temperature = m.temperature;
    sp.atoms = m.atoms;
    sp.seed = c.sc.seed;
    sp.half_cycle = m.half_cycle;
    sp.gradient = axial_gradient(m.gradient_x);
    if (m.trap_seed) sp.trap_seed = *m.trap_seed;
    sp.threads = threads;
    sp.steps_per_period = m.ensemble.steps_per_period;
    const auto cycles = split_merge_cycles(c.layout, c.sc.species, m.cycles, sp);
    std::ostringstream csv;
    csv << "cycle,T_x_K,T_y_K,T_z_K,split_left_fraction,loss_fraction\n";
    for (const auto& r : cycles) {
      csv << r.cycle << ',' << fmt(r.temperature[0]) << ',' << fmt(r.temperature[1]) << ',' << fmt(r.temperature[2])
          << ',' << fmt(r.split_left_fraction) << ',' << fmt(r.loss_fraction) << "\n";
      c.out << "cycle " << r.cycle << ": T = (" << fmt(r.temperature[0] * 1e6, 4) << ", "
            << fmt(r.temperature[1] * 1e6, 4) << ", " << fmt(r.temperature[2] * 1e6, 4) << ") uK, left "
            << fmt(r.split_left_fraction, 3) << "\n";
    }
    write_text(c.dir / "cycles.csv", csv.str());
    return kExitOk;
  }
  if (m.experiment == "double_well") {
    if (c.sc.schedule.form != "split_bec") throw ParseError("/schedule/form", "double_well needs the split_bec schedule");
    DoubleWellSplitParams dp;
    dp.split = split_from_json(c.sc.schedule.params);
    dp.temperature = m.temperature;
    dp.atoms = m.atoms;
    dp.seed = c.sc.seed;
    dp.duration = m.duration;
    dp.gradient = axial_gradient(m.gradient_x);
    if (m.trap_seed) dp.trap_seed = *m.trap_seed;
    dp.threads = threads;
    dp.steps_per_period = m.ensemble.steps_per_period;
    const auto eq = equilibrium_split(c.layout, c.sc.species, dp);
    const auto dyn = split_double_well(c.layout, c.sc.species, dp);
    write_json(c.dir / "double_well.json",
               {{"equilibrium_left_fraction", eq.left_fraction},
                {"dynamic_left_fraction", dyn.left_fraction},
                {"dynamic_loss_fraction", dyn.loss_fraction},
                {"saddle_x_m", dyn.saddle_x}});
    c.out << "left fraction: equilibrium " << fmt(eq.left_fraction, 4) << ", after the ramp "
          << fmt(dyn.left_fraction, 4) << "\n";
    return kExitOk;
  }
  // dispense
  std::vector<BinAction> plan;
  DispenseParams dp;
  dispenser_from_json(c.sc.schedule.params, plan, dp.dispenser);
  dp.omega = m.omega;
  dp.temperature = m.temperature;
  dp.atoms = m.atoms;
  dp.seed = c.sc.seed;
  if (m.trap_seed) dp.trap_seed = *m.trap_seed;
  dp.threads = threads;
  dp.steps_per_period = m.ensemble.steps_per_period;
  const DispenseResult r = dispense(c.layout, c.sc.species, plan, dp);
  std::ostringstream csv;
  csv << "bin,fraction,x_m\n";
  for (std::size_t k = 0; k < r.bins.size(); ++k)
    csv << k << ',' << fmt(r.bins[k]) << ',' << fmt(r.bin_positions[k]) << "\n";
  csv << "reservoir," << fmt(r.reservoir) << ",\n";
  csv << "other," << fmt(r.other) << ",\n";
  csv << "lost," << fmt(r.loss_fraction) << ",\n";
  write_text(c.dir / "dispense.csv", csv.str());
  c.out << "bins:";
  for (double b : r.bins) c.out << ' ' << fmt(b, 3);
  c.out << "; reservoir " << fmt(r.reservoir, 3) << "\n";
  return kExitOk;
}

int cmd_scan(Context& c) {
  const auto& s = require_section(c.sc.scan, "scan");
  const Schedule schedule = build_schedule(c.sc, c.layout, c.opt.threads);
  HeatingParams hp;
  hp.distance = s.distance;
  hp.ramp_distance = s.ramp_distance;
  hp.temperature = s.temperature;
  hp.atoms = s.atoms;
  hp.seed = c.sc.seed;
  if (s.trap_seed) hp.trap_seed = *s.trap_seed;
  hp.threads = c.opt.threads;
  const HeatingScan scan = heating_scan(c.layout, c.sc.species, schedule, s.v_max, hp);
  std::ostringstream csv;
  csv << "row,v_max_m_per_s,dT_x_K,dT_y_K,dT_z_K,loss_fraction\n";
  for (const auto& r : scan.runs)
    csv << "run," << fmt(r.v_max) << ',' << fmt(r.delta_t[0]) << ',' << fmt(r.delta_t[1]) << ',' << fmt(r.delta_t[2])
        << ',' << fmt(r.loss_fraction) << "\n";
  csv << "fit_c_K_per_m2s2,," << fmt(scan.fit[0].c) << ',' << fmt(scan.fit[1].c) << ',' << fmt(scan.fit[2].c) << ",\n";
  csv << "fit_r2,," << fmt(scan.fit[0].r2) << ',' << fmt(scan.fit[1].r2) << ',' << fmt(scan.fit[2].r2) << ",\n";
  write_text(c.dir / "heating.csv", csv.str());
  c.out << "c_z = " << fmt(scan.fit[2].c * 1e6 * 1e-4, 4) << " uK/(cm/s)^2, R^2 = " << fmt(scan.fit[2].r2, 4) << "\n";
  return kExitOk;
}

int cmd_sensitivity(Context& c) {
  const auto& s = require_section(c.sc.sensitivity, "sensitivity");
  ControlVector ctrl;
  if (s.control) {
    ctrl = *s.control;
  } else {
    ctrl = control_at(build_schedule(c.sc, c.layout, c.opt.threads), *s.at);
  }
  const auto trap = find_minimum(c.layout, ctrl, c.sc.species, s.trap_seed);
  SensitivityOptions so;
  so.threads = c.opt.threads;
  const JitterBudget b = linear_response(c.layout, ctrl, c.sc.species, trap, s.noise, so);
  const MonteCarloJitter mc = monte_carlo_jitter(c.layout, ctrl, c.sc.species, trap, s.noise, s.samples, c.sc.seed, so);
  write_text(c.dir / "budget.json", budget_json(b, &mc) + "\n");
  std::ostringstream csv;
  write_histogram_csv(csv, mc);
  write_text(c.dir / "histogram.csv", csv.str());
  c.out << "rms (nm)   linear: " << fmt(b.rms.x * 1e9, 3) << ' ' << fmt(b.rms.y * 1e9, 3) << ' ' << fmt(b.rms.z * 1e9, 3)
        << "   monte carlo: " << fmt(mc.rms.x * 1e9, 3) << ' ' << fmt(mc.rms.y * 1e9, 3) << ' '
        << fmt(mc.rms.z * 1e9, 3) << "\n";
  if (b.nonlinear || mc.lost > 0) throw Partial{"trap lost under some perturbations"};
  return kExitOk;
}

int cmd_frames(Context& c) {
  const auto& f = require_section(c.sc.frames, "frames");
  std::vector<EnsembleState> states;
  if (f.ensemble.program.empty()) {
    if (f.ensemble.clouds.empty()) {
      states.assign(f.times.size(), EnsembleState{});
    } else {
      const Schedule schedule = build_schedule(c.sc, c.layout, c.opt.threads);
      const auto [lo, hi] = schedule_span(schedule);
      (void)hi;
      const EnsembleState s = load_clouds(c, schedule.at(lo), f.ensemble);
      states.assign(f.times.size(), s);
    }
  } else {
    const Schedule schedule = build_schedule(c.sc, c.layout, c.opt.threads);
    const ControlProgram program = build_program(schedule, f.ensemble);
    if (f.times.back() > program.duration * (1.0 + 1e-12))
      throw ParseError("/frames/times", "frame times extend past the program (" + fmt(program.duration, 6) + " s)");
    EnsembleState s = load_clouds(c, program.at(0.0), f.ensemble);
    if (s.size() == 0) {
      states.assign(f.times.size(), s);
    } else {
      const ChipPotential pot(c.layout, c.sc.species, program);
      PropagateOptions po = ensemble_options(c, program, f.ensemble);
      po.snapshot_interval = 0.0;
      for (double t : f.times) {
        if (t > s.t) s = propagate(s, pot, std::min(t, program.duration), po).final_state;
        states.push_back(s);
      }
    }
  }
  std::vector<DensityImage> images;
  double peak = 0.0;
  for (const auto& s : states) {
    images.push_back(render_density(s, f.frame, c.sc.species.gravity));
    peak = std::max(peak, images.back().peak());
  }
  const double scale = peak > 0.0 ? 65535.0 / peak : 1.0;
  json index = {{"scale_counts_per_atom", scale},
                {"projection", std::string(1, f.frame.projection)},
                {"grid", {f.frame.nx, f.frame.nz}},
                {"pixel_m", f.frame.pixel},
                {"center_m", {f.frame.center_h, f.frame.center_v}},
                {"blur_m", f.frame.blur},
                {"tof_s", f.frame.tof},
                {"frames", json::array()}};
  for (std::size_t k = 0; k < images.size(); ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%03zu.pgm", k);
    write_pgm16(images[k], scale, c.dir / name);
    index["frames"].push_back(
        {{"file", name}, {"t_s", f.times[k]}, {"alive", states[k].alive_count()}, {"imaged_atoms", images[k].total()}});
  }
  write_json(c.dir / "index.json", index);
  c.out << "wrote " << images.size() << " frames\n";
  return kExitOk;
}

json plan_for(const Context& c) {
  const std::string& cmd = c.opt.command;
  json outputs = json::array();
  json steps = json::array();
  if (cmd == "analyze") {
    const auto& a = require_section(c.sc.analyze, "analyze");
    steps.push_back("find traps from a seed grid at " + std::to_string(a.at.size()) + " instant(s)");
    outputs = {"analyze.json"};
  } else if (cmd == "profile") {
    const auto& p = require_section(c.sc.profile, "profile");
    steps.push_back("axial profile with " + std::to_string(p.samples) + " samples at " + std::to_string(p.at.size()) +
                    " instant(s)");
    outputs = {"profile.csv", "schedule.csv"};
  } else if (cmd == "optimize") {
    const auto& o = require_section(c.sc.optimize, "optimize");
    steps.push_back(o.mode + " optimization over " + std::to_string(o.knots) + " knots");
    outputs = {"schedule.json", "schedule.csv", "report.json"};
  } else if (cmd == "simulate") {
    const auto& m = require_section(c.sc.simulate, "simulate");
    steps.push_back(m.experiment + " experiment");
    if (m.experiment == "ensemble") outputs = {"observables.csv", "final_state.bin", "summary.json"};
    if (m.experiment == "transport") outputs = {"transport.json"};
    if (m.experiment == "split_merge") outputs = {"cycles.csv"};
    if (m.experiment == "double_well") outputs = {"double_well.json"};
    if (m.experiment == "dispense") outputs = {"dispense.csv"};
  } else if (cmd == "scan") {
    const auto& s = require_section(c.sc.scan, "scan");
    steps.push_back("heating scan over " + std::to_string(s.v_max.size()) + " velocities");
    outputs = {"heating.csv"};
  } else if (cmd == "sensitivity") {
    const auto& s = require_section(c.sc.sensitivity, "sensitivity");
    steps.push_back("linear response and " + std::to_string(s.samples) + " Monte Carlo samples");
    outputs = {"budget.json", "histogram.csv"};
  } else if (cmd == "frames") {
    const auto& f = require_section(c.sc.frames, "frames");
    steps.push_back("render " + std::to_string(f.times.size()) + " frames");
    for (std::size_t k = 0; k < f.times.size(); ++k) {
      char name[32];
      std::snprintf(name, sizeof name, "frame_%03zu.pgm", k);
      outputs.push_back(name);
    }
    outputs.push_back("index.json");
  }
  if (c.sc.schedule.form == "merge_balanced" || c.sc.schedule.form == "height_optimized")
    steps.insert(steps.begin(), "solve the " + c.sc.schedule.form + " schedule");
  return {{"command", cmd},  {"scenario", c.sc.name}, {"seed", c.sc.seed}, {"threads", c.opt.threads},
          {"out", c.dir.string()}, {"steps", steps},   {"outputs", outputs}};
}

}  // namespace

const std::vector<std::string>& cli_commands() {
  static const std::vector<std::string> c = {"analyze", "profile", "optimize", "simulate", "scan", "sensitivity", "frames"};
  return c;
}

int run_command(const RunOptions& opt, std::ostream& out, std::ostream& err) {
  const auto& cmds = cli_commands();
  if (std::find(cmds.begin(), cmds.end(), opt.command) == cmds.end()) {
    err << "config error: unknown command '" << opt.command << "'\n";
    return kExitConfig;
  }
  if (opt.threads < 1) {
    err << "config error: --threads must be at least 1\n";
    return kExitConfig;
  }
  try {
    Scenario sc = load_scenario(opt.scenario);
    if (opt.seed) {
      sc.seed = *opt.seed;
      sc.si["seed"] = *opt.seed;
    }
    Context c{opt, sc, build_layout(sc), out, opt.out};
    if (opt.dry_run) {
      out << plan_for(c).dump(2) << "\n";
      return kExitOk;
    }
    fs::create_directories(c.dir);
    log(LogLevel::Info, "running " + opt.command + " on scenario " + sc.name);
    const std::string& cmd = opt.command;
    if (cmd == "analyze") return cmd_analyze(c);
    if (cmd == "profile") return cmd_profile(c);
    if (cmd == "optimize") return cmd_optimize(c);
    if (cmd == "simulate") return cmd_simulate(c);
    if (cmd == "scan") return cmd_scan(c);
    if (cmd == "sensitivity") return cmd_sensitivity(c);
    return cmd_frames(c);
  } catch (const Partial& p) {
    err << "partial result: " << p.why << "\n";
    return kExitPartial;
  } catch (const ParseError& e) {
    err << "config error: " << e.location() << ": " << e.detail() << "\n";
    return kExitConfig;
  } catch (const InvalidParameter& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const TrapError& e) {
    err << "no trap: " << e.what() << "\n";
    return kExitNoTrap;
  } catch (const NoConvergence& e) {
    err << "no trap: " << e.what() << "\n";
    return kExitNoTrap;
  } catch (const MultiplicityError& e) {
    err << "no trap: " << e.what() << "\n";
    return kExitNoTrap;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

int cli_main(int argc, char** argv) {
  CLI::App app{"Atom-chip trap design and simulation"};
  RunOptions opt;
  std::uint64_t seed = 0;
  app.add_option("command", opt.command, "analyze|profile|optimize|simulate|scan|sensitivity|frames")
      ->required()
      ->check(CLI::IsMember(cli_commands()));
  app.add_option("--scenario", opt.scenario, "scenario JSON file")->required();
  app.add_option("--out", opt.out, "output directory");
  auto* seed_opt = app.add_option("--seed", seed, "RNG seed, overrides the scenario");
  app.add_option("--threads", opt.threads, "worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--dry-run", opt.dry_run, "validate and print the plan");
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }
  if (seed_opt->count() > 0) opt.seed = seed;
  return run_command(opt, std::cout, std::cerr);
}

}  // namespace chiptrap
