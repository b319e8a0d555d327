#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "chiptrap/dynamics.hpp"
#include "chiptrap/errors.hpp"
#include "chiptrap/optimizer.hpp"

namespace chiptrap {

namespace {

PropagateOptions step_options(double nu_max, double steps_per_period, int threads) {
  if (!(steps_per_period > 0.0)) throw InvalidParameter("steps per period must be positive");
  PropagateOptions o;
  o.nu_max = nu_max;
  o.dt = 1.0 / (steps_per_period * nu_max);
  o.threads = threads;
  return o;
}

Trajectory run_program(const ChipLayout& layout, const SpeciesParams& species, EnsembleState state,
                       const ControlProgram& program, const PropagateOptions& options) {
  state.t = 0.0;
  const ChipPotential potential(layout, species, program);
  return propagate(state, potential, program.duration, options);
}

struct Hold {
  std::array<double, 3> temperature{};
  EnsembleState state;
};

// Static hold; the temperature is the mean over snapshots every `sample`, start included.
Hold hold_average(const ChipLayout& layout, const SpeciesParams& species, const EnsembleState& state,
                  const ControlVector& ctrl, double hold, double sample, PropagateOptions options) {
  if (!(hold > 0.0) || !(sample > 0.0)) throw InvalidParameter("hold and sampling interval must be positive");
  options.snapshot_interval = sample;
  const Trajectory tr = run_program(layout, species, state, ControlProgram::constant(ctrl, hold), options);
  Hold h;
  for (const auto& s : tr.snapshots)
    for (int a = 0; a < 3; ++a) h.temperature[a] += s.temperature[a];
  for (double& v : h.temperature) v /= static_cast<double>(tr.snapshots.size());
  h.state = tr.final_state;
  return h;
}

double lost_fraction(const EnsembleState& s) {
  return s.size() ? 1.0 - static_cast<double>(s.alive_count()) / static_cast<double>(s.size()) : 0.0;
}

// Fraction of alive atoms with x below `cut`.
double left_share(const EnsembleState& s, double cut) {
  std::size_t left = 0, alive = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!s.alive[i]) continue;
    ++alive;
    if (s.positions[i].x < cut) ++left;
  }
  return alive ? static_cast<double>(left) / static_cast<double>(alive) : 0.0;
}

}  // namespace

TransportHeating transport_heating(const ChipLayout& layout, const SpeciesParams& species, const Schedule& schedule,
                                   const std::vector<PhaseLaw>& laws, const HeatingParams& p) {
  if (schedule.variable() != ScheduleVariable::Phase) throw InvalidParameter("transport needs a phase schedule");
  const ControlVector start = schedule.at(0.0);
  const TrapCharacterization trap = find_minimum(layout, start, species, p.trap_seed);
  const EnsembleState initial = sample_thermal(layout, start, species, trap, p.temperature, p.atoms, p.seed);

  TransportHeating out;
  out.before = hold_average(layout, species, initial, start, p.hold, p.hold_sample,
                            step_options(trap.freqs[2], p.steps_per_period, p.threads))
                   .temperature;
  for (const PhaseLaw& law : laws) {
    const ControlProgram program = ControlProgram::phase(schedule, law);
    const double nu = max_trap_frequency(layout, species, program, trap.position, 32);
    const PropagateOptions o = step_options(nu, p.steps_per_period, p.threads);
    const Trajectory tr = run_program(layout, species, initial, program, o);
    const Hold after = hold_average(layout, species, tr.final_state, program.at(program.duration), p.hold,
                                    p.hold_sample, o);
    TransportRun run;
    run.v_max = law.velocity(0.5 * law.end_time());
    for (int a = 0; a < 3; ++a) run.delta_t[a] = after.temperature[a] - out.before[a];
    run.loss_fraction = lost_fraction(after.state);
    run.duration = program.duration;
    out.runs.push_back(run);
  }
  return out;
}

HeatingScan heating_scan(const ChipLayout& layout, const SpeciesParams& species, const Schedule& schedule,
                         const std::vector<double>& v_max, const HeatingParams& p) {
  if (v_max.empty()) throw InvalidParameter("heating scan needs at least one velocity");
  std::vector<PhaseLaw> laws;
  for (double v : v_max) {
    if (!(v > 0.0)) throw InvalidParameter("transport velocities must be positive");
    laws.push_back(PhaseLaw::piecewise(v, p.distance, p.ramp_distance));
  }
  TransportHeating t = transport_heating(layout, species, schedule, laws, p);
  HeatingScan out;
  out.before = t.before;
  out.runs = std::move(t.runs);
  for (std::size_t i = 0; i < out.runs.size(); ++i) out.runs[i].v_max = v_max[i];
  for (int a = 0; a < 3; ++a) {
    std::vector<double> dt;
    for (const auto& r : out.runs) dt.push_back(r.delta_t[a]);
    out.fit[a] = fit_quadratic(v_max, dt);
  }
  return out;
}

std::vector<CycleResult> split_merge_cycles(const ChipLayout& layout, const SpeciesParams& species, int cycles,
                                            const SplitMergeParams& p) {
  if (cycles < 0) throw InvalidParameter("cycle count must be non-negative");
  if (!(p.half_cycle > 0.0)) throw InvalidParameter("half cycle must be positive");
  const Schedule schedule = p.schedule ? *p.schedule : merge_schedule(p.conveyor);
  auto at = [&](double phi) {
    ControlVector c = schedule.at(phi);
    c.gradient += p.gradient;
    return c;
  };
  const ControlVector merged = at(p.phi_merged);
  const TrapCharacterization trap = find_minimum(layout, merged, species, p.trap_seed);
  SamplingOptions so;
  so.x_lo = p.window_lo;
  so.x_hi = p.window_hi;
  EnsembleState state = sample_thermal(layout, merged, species, trap, p.temperature, p.atoms, p.seed, so);

  const ControlProgram split =
      ControlProgram::phase_sweep(schedule, p.phi_merged, p.phi_split, p.half_cycle).with_gradient(p.gradient);
  const ControlProgram merge =
      ControlProgram::phase_sweep(schedule, p.phi_split, p.phi_merged, p.half_cycle).with_gradient(p.gradient);
  const PotentialLandscape split_landscape(layout, at(p.phi_split), species);
  const ValleyExtrema wells =
      valley_double_well(split_landscape, p.window_lo, p.window_hi, 241, trap.position.y, trap.position.z);
  // both wells are followed, so the step suits the stiffer one
  const double nu = std::max({trap.freqs[2], max_trap_frequency(layout, species, split, trap.position, 32),
                              max_trap_frequency(layout, species, merge, wells.left_point, 32),
                              max_trap_frequency(layout, species, merge, wells.right_point, 32)});
  const PropagateOptions o = step_options(nu, p.steps_per_period, p.threads);

  std::vector<CycleResult> out;
  Hold h = hold_average(layout, species, state, merged, p.hold, p.hold_sample, o);
  out.push_back({0, h.temperature, std::numeric_limits<double>::quiet_NaN(), lost_fraction(h.state)});
  state = std::move(h.state);
  for (int c = 1; c <= cycles; ++c) {
    const Trajectory s = run_program(layout, species, state, split, o);
    const double share = left_share(s.final_state, wells.saddle_x);
    const Trajectory m = run_program(layout, species, s.final_state, merge, o);
    h = hold_average(layout, species, m.final_state, merged, p.hold, p.hold_sample, o);
    out.push_back({c, h.temperature, share, lost_fraction(h.state)});
    state = std::move(h.state);
  }
  return out;
}

DoubleWellSplitResult equilibrium_split(const ChipLayout& layout, const SpeciesParams& species,
                                        const DoubleWellSplitParams& p) {
  ControlVector ctrl = split_ramp_bec(1.0, p.split);
  ctrl.gradient += p.gradient;
  const PotentialLandscape landscape(layout, ctrl, species);
  const TrapCharacterization start = find_minimum(layout, split_ramp_bec(0.0, p.split), species, p.trap_seed);
  const ValleyExtrema wells =
      valley_double_well(landscape, p.window_lo, p.window_hi, 241, start.position.y, start.position.z);
  const TrapCharacterization left = find_minimum(landscape, wells.left_point);
  const TrapCharacterization right = find_minimum(landscape, wells.right_point);
  SamplingOptions so;
  so.x_lo = p.window_lo;
  so.x_hi = p.window_hi;
  so.hop = right.position - left.position;
  const EnsembleState s = sample_thermal(landscape, left, p.temperature, p.atoms, p.seed, so);
  DoubleWellSplitResult out;
  out.saddle_x = wells.saddle_x;
  out.left_fraction = left_share(s, wells.saddle_x);
  return out;
}

DoubleWellSplitResult split_double_well(const ChipLayout& layout, const SpeciesParams& species,
                                        const DoubleWellSplitParams& p) {
  const ControlProgram program =
      ControlProgram::ramp(split_bec_schedule(p.split), p.duration).with_gradient(p.gradient);
  const ControlVector start = program.at(0.0);
  const TrapCharacterization trap = find_minimum(layout, start, species, p.trap_seed);
  SamplingOptions so;
  so.x_lo = p.window_lo;
  so.x_hi = p.window_hi;
  const EnsembleState state = sample_thermal(layout, start, species, trap, p.temperature, p.atoms, p.seed, so);

  const PotentialLandscape final_landscape(layout, program.at(p.duration), species);
  const ValleyExtrema wells =
      valley_double_well(final_landscape, p.window_lo, p.window_hi, 241, trap.position.y, trap.position.z);
  SplitParams back = p.split;
  std::swap(back.i0_start, back.i0_end);
  const ControlProgram reverse = ControlProgram::ramp(split_bec_schedule(back), p.duration).with_gradient(p.gradient);
  const double nu = std::max({max_trap_frequency(layout, species, program, trap.position, 32),
                              max_trap_frequency(layout, species, reverse, wells.left_point, 32),
                              max_trap_frequency(layout, species, reverse, wells.right_point, 32)});
  const Trajectory tr = run_program(layout, species, state, program, step_options(nu, p.steps_per_period, p.threads));

  DoubleWellSplitResult out;
  out.saddle_x = wells.saddle_x;
  out.left_fraction = left_share(tr.final_state, wells.saddle_x);
  out.loss_fraction = lost_fraction(tr.final_state);
  return out;
}

double DispenseResult::extracted() const {
  double s = 0.0;
  for (double b : bins) s += b;
  return s;
}

DispenseResult dispense(const ChipLayout& layout, const SpeciesParams& species, const std::vector<BinAction>& plan,
                        const DispenseParams& p) {
  if (plan.empty()) throw InvalidParameter("dispenser plan is empty");
  if (!(p.omega > 0.0)) throw InvalidParameter("conveyor rate must be positive");
  const Schedule schedule = dispenser_schedule(plan, p.dispenser);
  const double phi_end = 2.0 * units::pi * static_cast<double>(plan.size());
  const ControlProgram program = ControlProgram::phase(schedule, PhaseLaw::linear(p.omega, phi_end / p.omega));

  const ControlVector start = schedule.at(0.0);
  const TrapCharacterization reservoir = find_minimum(layout, start, species, p.trap_seed);
  SamplingOptions so;
  so.x_lo = p.reservoir_lo;
  so.x_hi = p.reservoir_hi;
  so.box = p.box;
  const EnsembleState state = sample_thermal(layout, start, species, reservoir, p.temperature, p.atoms, p.seed, so);

  // Well k pinches off from the reservoir half way through period k and is followed to
  // the end of the plan.
  double nu = max_trap_frequency(layout, species, program, reservoir.position, 64);
  std::vector<double> bin_x;
  for (std::size_t k = 0; k < plan.size(); ++k) {
    std::vector<ControlVector> controls;
    const double phi0 = 2.0 * units::pi * static_cast<double>(k) + units::pi;
    const int n = static_cast<int>(std::ceil((phi_end - phi0) / (units::pi / 16.0)));
    for (int j = 0; j <= n; ++j) controls.push_back(schedule.at(phi0 + (phi_end - phi0) * j / n));
    const auto track = track_trap(layout, species, controls, p.pinch_seed);
    for (const auto& t : track) nu = std::max(nu, t.freqs[2]);
    bin_x.push_back(track.back().position.x);
  }

  PropagateOptions o = step_options(nu, p.steps_per_period, p.threads);
  o.box = p.box;
  const Trajectory tr = run_program(layout, species, state, program, o);

  // basins are bounded by the highest axial field between neighbouring known wells
  const ControlVector end = schedule.at(phi_end);
  const TrapCharacterization res_end = find_minimum(layout, end, species, reservoir.position);
  std::vector<std::pair<double, int>> wells{{res_end.position.x, -1}};  // (x, bin index or -1)
  for (std::size_t k = 0; k < bin_x.size(); ++k) wells.emplace_back(bin_x[k], static_cast<int>(k));
  std::sort(wells.begin(), wells.end());
  const double x_hi = wells.back().first + p.well_spacing;
  const AxialProfile prof =
      axial_profile(layout, end, wells.front().first, x_hi,
                    static_cast<int>(std::ceil((x_hi - wells.front().first) / 5e-6)) + 1, 0.0, reservoir.position.z);
  auto ridge = [&](double lo, double hi) {
    double best = 0.5 * (lo + hi), b = -1.0;
    for (const auto& smp : prof.samples)
      if (smp.valid && smp.x > lo && smp.x < hi && smp.Bmin > b) {
        b = smp.Bmin;
        best = smp.x;
      }
    return best;
  };
  std::vector<double> edges;
  for (std::size_t i = 0; i + 1 < wells.size(); ++i) edges.push_back(ridge(wells[i].first, wells[i + 1].first));
  edges.push_back(ridge(wells.back().first, x_hi));

  DispenseResult out;
  out.bins.assign(plan.size(), 0.0);
  out.bin_positions = bin_x;
  const auto& f = tr.final_state;
  const double n_total = static_cast<double>(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (!f.alive[i]) continue;
    const auto w = static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), f.positions[i].x) -
                                            edges.begin());
    if (w >= wells.size())
      out.other += 1.0;
    else if (wells[w].second < 0)
      out.reservoir += 1.0;
    else
      out.bins[static_cast<std::size_t>(wells[w].second)] += 1.0;
  }
  if (n_total > 0.0) {
    out.reservoir /= n_total;
    out.other /= n_total;
    for (double& b : out.bins) b /= n_total;
  }
  out.loss_fraction = lost_fraction(f);
  return out;
}

}  // namespace chiptrap
