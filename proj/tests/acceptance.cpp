// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <thread>

#include "chiptrap/cli.hpp"
#include "chiptrap/dynamics.hpp"
#include "chiptrap/errors.hpp"
#include "chiptrap/optimizer.hpp"
#include "chiptrap/scenario.hpp"
#include "chiptrap/sensitivity.hpp"

using namespace chiptrap;
using nlohmann::json;
using units::gauss;
using units::pi;
namespace fs = std::filesystem;

namespace {

const fs::path kScenarios = CHIPTRAP_SCENARIO_DIR;
int g_threads = 1;

struct Verdict {
  bool pass = true;
  std::ostringstream detail;

  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    detail << (detail.tellp() > 0 ? "; " : "") << what << (ok ? "" : " [fails]");
  }
};

std::string f(double v, int digits = 4) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double uK(double kelvin) { return kelvin / units::microkelvin; }

Scenario scenario(const char* name) { return load_scenario(kScenarios / name); }

// ---------------------------------------------------------------------------

void field_oracle(Verdict& v) {
  const double L = 1.0;
  const WireSegment seg{{-L / 2, 0, 0}, {L / 2, 0, 0}, "W"};
  double worst = 0.0;
  for (double d = 10e-6; d <= L / 100; d *= 1.5) {
    const double expected = units::mu0 * 2.0 / (2.0 * pi * d);
    worst = std::max(worst, std::abs(norm(segment_field(seg, 2.0, {0, 0, d})) - expected) / expected);
  }
  v.check(worst < 1e-3, "infinite-wire deviation " + f(worst * 100, 3) + " %");

  // open leads end in mid-air, so every channel is closed by a return segment
  const ChipLayout open = canonical_layout();
  std::vector<WireSegment> segs = open.segments();
  for (const auto& ch : open.channels()) {
    const WireSegment* first = nullptr;
    const WireSegment* last = nullptr;
    for (const auto& s : open.segments())
      if (s.channel == ch) {
        if (!first) first = &s;
        last = &s;
      }
    if (first && norm(last->end - first->start) > 0) segs.push_back({last->end, first->start, ch});
  }
  ControlVector c;
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> cur(-2.0, 2.0), b(-20 * gauss, 20 * gauss);
  for (const auto& ch : open.channels()) c.set(ch, cur(rng));
  c.bias = {b(rng), b(rng), b(rng)};
  const FieldModel model(ChipLayout(open.channels(), segs), c);
  std::uniform_real_distribution<double> ux(-3e-3, 6e-3), uy(-1e-3, 1e-3), uz(30e-6, 1e-3);
  const double h = 0.05e-6;
  double worst_div = 0.0, worst_curl = 0.0;
  for (int k = 0; k < 100; ++k) {
    const Vec3 p{ux(rng), uy(rng), uz(rng)};
    Mat3 J{};
    for (int j = 0; j < 3; ++j) {
      Vec3 e;
      e[j] = h;
      const Vec3 d = (model.field(p + e) - model.field(p - e)) / (2 * h);
      for (int i = 0; i < 3; ++i) J[i][j] = d[i];
    }
    double scale = 0;
    for (const auto& row : J)
      for (double x : row) scale = std::max(scale, std::abs(x));
    const Vec3 curl{J[2][1] - J[1][2], J[0][2] - J[2][0], J[1][0] - J[0][1]};
    worst_div = std::max(worst_div, std::abs(J[0][0] + J[1][1] + J[2][2]) / scale);
    worst_curl = std::max(worst_curl, norm(curl) / scale);
  }
  v.check(worst_div < 1e-4 && worst_curl < 1e-4,
          "max |div B|, |curl B| relative to |dB| over 100 points: " + f(worst_div, 2) + ", " + f(worst_curl, 2));
}

void side_guide(Verdict& v) {
  const ChipLayout wire({"W"}, {{{-0.5, 0, 0}, {0.5, 0, 0}, "W"}});
  ControlVector c;
  c.set("W", 2.0);
  c.bias = {0, 16 * gauss, 0};
  // golden-section search of |B| along z above the wire
  double a = 100e-6, b = 500e-6;
  const double g = 0.5 * (std::sqrt(5.0) - 1.0);
  auto field = [&](double z) { return norm(total_field(wire, c, {0, 0, z})); };
  for (int i = 0; i < 200 && b - a > 1e-12; ++i) {
    const double x1 = b - g * (b - a), x2 = a + g * (b - a);
    (field(x1) < field(x2) ? b : a) = field(x1) < field(x2) ? x2 : x1;
  }
  const double z = 0.5 * (a + b);
  v.check(std::abs(z - 250e-6) / 250e-6 < 0.01, "guide height " + f(z * 1e6, 6) + " um (expected 250 um)");
}

void conveyor_kinematics(Verdict& v) {
  const auto layout = canonical_layout();
  const auto sp = SpeciesParams::rb87();
  const double period = 0.150;  // s, at omega = 2 pi / 150 ms
  const Schedule sched = basic_conveyor_schedule();
  std::vector<ControlVector> ctrls;
  const int n = 64;
  for (int k = 0; k <= n; ++k) ctrls.push_back(sched.at(2.0 * pi * k / n));
  const auto track = track_trap(layout, sp, ctrls, {1.16e-3, 0, 250e-6});
  const double advance = track.back().position.x - track.front().position.x;
  const double speed = advance / period;
  const double traverse = 4.6e-3 / speed;
  v.check(std::abs(advance - 800e-6) / 800e-6 <= 0.02, "advance per period " + f(advance * 1e6) + " um");
  v.check(std::abs(speed - 5.33e-3) / 5.33e-3 <= 0.05, "mean speed " + f(speed * 1e3) + " mm/s");
  v.check(std::abs(traverse - 0.863) / 0.863 <= 0.05, "4.6 mm in " + f(traverse * 1e3) + " ms");
}

void blackman(Verdict& v) {
  const double T = 50e-3, d = 0.8e-3;
  const double v0 = blackman_velocity(0.0, T, d), v1 = blackman_velocity(T, T, d);
  v.check(v0 == 0.0 && std::abs(v1) < 1e-15 * d / T, "end velocities " + f(v0, 2) + ", " + f(v1, 2));
  const int n = 4000;
  double area = 0;
  for (int i = 0; i <= n; ++i) {
    const double w = (i == 0 || i == n) ? 1 : (i % 2 ? 4 : 2);
    area += w * blackman_velocity(T * i / n, T, d);
  }
  area *= T / n / 3.0;
  v.check(std::abs(area - d) / d < 1e-6, "area error " + f(std::abs(area - d) / d, 2));
  const double peak = blackman_velocity(T / 2, T, d), expected = 50.0 / 21.0 * d / T;
  v.check(std::abs(peak - expected) / expected < 1e-9, "peak error " + f(std::abs(peak - expected) / expected, 2));
}

void energy_units(Verdict& v) {
  SpeciesParams s = SpeciesParams::rb87();
  s.gravity = {};
  ControlVector c;
  c.bias = {0, 60 * units::milligauss, 0};
  const double T = uK(potential(ChipLayout(), c, s, {0, 0, 1e-4}) / units::k_boltzmann);
  v.check(std::abs(T - 4.0) / 4.0 <= 0.01, "60 mG = " + f(T) + " uK");
}

void quantum_formulas(Verdict& v) {
  const auto rb = SpeciesParams::rb87();
  const double a = ground_state_extension(11e3, rb), b = ground_state_extension(730.0, rb);
  v.check(std::abs(a - 100e-9) / 100e-9 <= 0.05, "extension at 11 kHz " + f(a * 1e9) + " nm");
  v.check(std::abs(b - 400e-9) / 400e-9 <= 0.05, "at 730 Hz " + f(b * 1e9) + " nm");
  const double mu = chemical_potential_tf(1000, 680.0, 5.24e-9, rb) / units::k_boltzmann / units::nanokelvin;
  v.check(std::abs(mu - 130.0) / 130.0 <= 0.10, "Thomas-Fermi mu " + f(mu) + " nK");
}

void optimizer(Verdict& v) {
  const auto layout = canonical_layout();
  const auto sp = SpeciesParams::rb87();
  auto t0 = std::chrono::steady_clock::now();
  const HeightOnlyResult h = optimize_height(layout, sp, basic_conveyor_schedule());
  double lo = 1, hi = -1, olo = 1, ohi = -1;
  for (const auto& t : h.reference) lo = std::min(lo, t.position.z), hi = std::max(hi, t.position.z);
  for (const auto& k : h.optimized.knots) olo = std::min(olo, k.trap.position.z), ohi = std::max(ohi, k.trap.position.z);
  v.check(h.optimized.all_converged() && (hi - lo) >= 3.0 * (ohi - olo),
          "height peak-to-peak " + f((hi - lo) * 1e6) + " -> " + f((ohi - olo) * 1e6) + " um");
  const double t_height = seconds_since(t0);

  t0 = std::chrono::steady_clock::now();
  const Scenario sc = scenario("stabilized_full.json");
  const OptimizeConfig& o = *sc.optimize;
  const auto start = find_minimum(layout, basic_conveyor(0.0), sp, o.trap_seed);
  std::vector<SweepKnot> knots;
  for (int k = 0; k < o.knots; ++k) {
    const double phi = 2.0 * pi * k / o.knots;
    TrapTarget t;
    t.x_target = start.position.x + o.period * phi / (2.0 * pi);
    t.x_tol = o.x_tol;
    t.z_target = o.z;
    t.z_tol = o.z_tol;
    t.freq_targets = {{Axis::X, o.nu_x, o.nu_x_tol}, {Axis::Z, o.nu_z, o.nu_z_tol}};
    t.free_knobs = o.free_knobs;
    t.seed = Vec3{*t.x_target, 0.0, o.z};
    knots.push_back({phi, basic_conveyor(phi), t});
  }
  const OptimizedSchedule full = sweep_schedule(layout, sp, knots, true);
  double dz = 0, dnx = 0, dnz = 0;
  for (const auto& k : full.knots) {
    dz = std::max(dz, std::abs(k.trap.position.z - 260e-6));
    dnx = std::max(dnx, std::abs(k.trap.frequency_along({1, 0, 0}) - 60.0));
    dnz = std::max(dnz, std::abs(k.trap.frequency_along({0, 0, 1}) - 400.0));
  }
  v.check(full.complete && full.knots.size() == knots.size() && dz <= 1e-6 && dnx <= 1.5 && dnz <= 2.5,
          std::to_string(full.knots.size()) + " full knots, worst |dz| " + f(dz * 1e6, 3) + " um, |dnu_x| " +
              f(dnx, 3) + " Hz, |dnu_z| " + f(dnz, 3) + " Hz");
  const double t_full = seconds_since(t0);
  v.check(t_height <= 600 && t_full <= 600, "runtime " + f(t_height, 3) + " s + " + f(t_full, 3) + " s");
}

void dynamics(Verdict& v) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto layout = canonical_layout();
  const auto sp = SpeciesParams::rb87();
  const ControlVector c = basic_conveyor(0.0);
  const auto trap = find_minimum(layout, c, sp, {1.16e-3, 0, 250e-6});
  const double nu_max = *std::max_element(trap.freqs.begin(), trap.freqs.end());

  {  // energy drift in the static chip trap
    const EnsembleState s = sample_thermal(layout, c, sp, trap, 5e-6, 8, 21);
    PropagateOptions po;
    po.nu_max = nu_max;
    po.snapshot_interval = 10.0 / (100.0 * nu_max);
    po.threads = g_threads;
    const ChipPotential pot(layout, sp, ControlProgram::constant(c, 10.0));
    const auto tr = propagate(s, pot, 1e5 / (100.0 * nu_max), po);
    const std::size_t w = tr.snapshots.size() / 100;
    double e0 = 0, e1 = 0;
    for (std::size_t i = 0; i < w; ++i) {
      e0 += tr.snapshots[i].mean_energy;
      e1 += tr.snapshots[tr.snapshots.size() - 1 - i].mean_energy;
    }
    const double kinetic = 3.0 * units::k_boltzmann * 5e-6 * w;  // energy scale of the motion
    const double drift = std::abs(e1 - e0) / kinetic;
    v.check(tr.steps == 100000 && drift < 1e-4, "energy drift " + f(drift, 2) + " of the thermal energy over " +
                                                    std::to_string(tr.steps) + " steps");
  }
  {  // small axial oscillation
    const Vec3 axis = trap.axes[0];
    EnsembleState s;
    s.mass = sp.mass;
    s.positions = {trap.position + axis * 0.5e-6};
    s.velocities = {Vec3{}};
    s.alive = {1};
    s.majorana = {0};
    const double nu = trap.freqs[0];
    PropagateOptions po;
    po.nu_max = nu_max;
    po.snapshot_interval = 1.0 / (nu * 200.0);
    const ChipPotential pot(layout, sp, ControlProgram::constant(c, 10.0));
    const auto tr = propagate(s, pot, 20.0 / nu, po);
    std::vector<double> crossings;
    auto proj = [&](const Observables& o) { return dot(o.com - trap.position, axis); };
    for (std::size_t i = 1; i < tr.snapshots.size(); ++i) {
      const double x0 = proj(tr.snapshots[i - 1]), x1 = proj(tr.snapshots[i]);
      if (x0 < 0.0 && x1 >= 0.0)
        crossings.push_back(tr.snapshots[i - 1].t + (tr.snapshots[i].t - tr.snapshots[i - 1].t) * (-x0) / (x1 - x0));
    }
    const double measured =
        crossings.size() > 1 ? (crossings.size() - 1) / (crossings.back() - crossings.front()) : 0.0;
    v.check(std::abs(measured - nu) / nu <= 0.01, "oscillation " + f(measured, 5) + " Hz vs " + f(nu, 5) + " Hz");
  }
  {  // slow transport
    const Scenario sc = scenario("transport_heating.json");
    HeatingParams hp;
    hp.temperature = sc.simulate->temperature;
    hp.atoms = sc.simulate->atoms;
    hp.seed = sc.seed;
    hp.threads = g_threads;
    const auto th = transport_heating(layout, sp, build_schedule(sc, layout, g_threads), {*sc.phase_law}, hp);
    const auto& d = th.runs.front().delta_t;
    const double worst = std::max({d[0], d[1], d[2]});
    v.check(worst < 2e-6, "slow transport dT = (" + f(uK(d[0]), 3) + ", " + f(uK(d[1]), 3) + ", " + f(uK(d[2]), 3) +
                              ") uK");
  }
  {  // heating scans
    auto scan = [&](const char* file) {
      const Scenario sc = scenario(file);
      HeatingParams hp;
      hp.distance = sc.scan->distance;
      hp.ramp_distance = sc.scan->ramp_distance;
      hp.temperature = sc.scan->temperature;
      hp.atoms = sc.scan->atoms;
      hp.seed = sc.seed;
      hp.threads = g_threads;
      return heating_scan(layout, sp, build_schedule(sc, layout, g_threads), sc.scan->v_max, hp);
    };
    const HeatingScan basic = scan("transport_heating.json");
    const HeatingScan opt = scan("transport_heating_optimized.json");
    const double r2 = std::min({basic.fit[0].r2, basic.fit[2].r2});
    const double cm2 = units::microkelvin / 1e-4;  // uK per (cm/s)^2
    v.check(r2 >= 0.95, "quadratic fit R^2 (x, z) = " + f(basic.fit[0].r2, 3) + ", " + f(basic.fit[2].r2, 3));
    v.check(opt.fit[2].c < basic.fit[2].c, "c_z optimized " + f(opt.fit[2].c / cm2, 3) + " vs basic " +
                                               f(basic.fit[2].c / cm2, 3) + " uK/(cm/s)^2");
  }
  const double t = seconds_since(t0);
  v.check(t <= 600, "runtime " + f(t, 3) + " s");
}

void split_merge(Verdict& v) {
  const auto layout = canonical_layout();
  const auto sp = SpeciesParams::rb87();
  {
    const Scenario sc = scenario("reunify.json");
    SplitMergeParams p;
    p.schedule = build_schedule(sc, layout, g_threads);
    p.temperature = sc.simulate->temperature;
    p.atoms = sc.simulate->atoms;
    p.half_cycle = sc.simulate->half_cycle;
    p.seed = sc.seed;
    p.threads = g_threads;
    const auto cycles = split_merge_cycles(layout, sp, sc.simulate->cycles, p);
    // per-cycle growth: least-squares slope of the mean temperature over the initial value
    std::vector<double> T;
    for (const auto& r : cycles) T.push_back((r.temperature[0] + r.temperature[1] + r.temperature[2]) / 3.0);
    const double n = static_cast<double>(T.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < T.size(); ++i) sx += i, sy += T[i], sxx += double(i) * i, sxy += i * T[i];
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    const double growth = slope / T.front();
    std::string temps;
    for (double t : T) temps += (temps.empty() ? "" : " ") + f(uK(t), 3);
    v.check(cycles.size() == 6 && growth <= 0.05,
            "5 cycles, mean T " + temps + " uK, growth " + f(growth * 100, 3) + " %/cycle");
  }
  const Scenario ms = scenario("multisplit.json");
  DoubleWellSplitParams d;
  d.split = split_from_json(ms.schedule.params);
  d.temperature = ms.simulate->temperature;
  d.atoms = 10000;
  d.seed = ms.seed;
  d.threads = g_threads;
  const double even = equilibrium_split(layout, sp, d).left_fraction;
  v.check(std::abs(even - 0.5) <= 0.05, "balanced split left " + f(even * 100, 3) + " % of N = 10^4");
  d.gradient = axial_gradient(1 * gauss / 1e-2);
  const double plus = equilibrium_split(layout, sp, d).left_fraction;
  d.gradient = axial_gradient(-1 * gauss / 1e-2);
  const double minus = equilibrium_split(layout, sp, d).left_fraction;
  v.check((plus - 0.5) * (minus - 0.5) < 0 && std::abs(plus - minus) > 0.02,
          "dBx/dx = +1 / -1 G/cm gives left " + f(plus * 100, 3) + " / " + f(minus * 100, 3) + " %");
}

void dispenser(Verdict& v) {
  const auto layout = canonical_layout();
  const auto sp = SpeciesParams::rb87();
  const Scenario sc = scenario("replenish.json");
  std::vector<BinAction> plan;
  DispenseParams p;
  dispenser_from_json(sc.schedule.params, plan, p.dispenser);
  p.temperature = sc.simulate->temperature;
  p.atoms = sc.simulate->atoms;
  p.omega = sc.simulate->omega;
  p.seed = sc.seed;
  p.threads = g_threads;
  const DispenseResult r = dispense(layout, sp, plan, p);
  const double loaded = 0.5 * (r.bins[0] + r.bins[1]);
  v.check(std::abs(r.bins[0] - r.bins[1]) <= 0.2 * loaded, "bins 1, 2: " + f(r.bins[0] * 100, 3) + ", " +
                                                                 f(r.bins[1] * 100, 3) + " % of N");
  v.check(r.bins[2] < 0.01 * loaded, "bin 3: " + f(r.bins[2] / loaded * 100, 3) + " % of a loaded bin");
  v.check(r.bins[3] > 0.0, "bin 4: " + f(r.bins[3] * 100, 3) + " % of N");

  std::vector<double> extracted;
  std::string list;
  for (double ih1 : {0.0, 0.2, 0.4, 0.8}) {
    extracted.push_back(dispense(layout, sp, {BinAction::load_with(ih1)}, p).extracted());
    list += (list.empty() ? "" : ", ") + f(extracted.back() * 100, 3);
  }
  bool monotone = true;
  for (std::size_t i = 1; i < extracted.size(); ++i) monotone = monotone && extracted[i] <= extracted[i - 1];
  v.check(monotone, "extracted at I_H1 = 0, 0.2, 0.4, 0.8 A: " + list + " %");
}

void sensitivity(Verdict& v) {
  const auto layout = canonical_layout();
  const Scenario sc = scenario("jitter.json");
  const auto& s = *sc.sensitivity;
  const auto trap = find_minimum(layout, *s.control, sc.species, s.trap_seed);
  SensitivityOptions so;
  so.threads = g_threads;
  const JitterBudget b = linear_response(layout, *s.control, sc.species, trap, s.noise, so);
  const MonteCarloJitter mc = monte_carlo_jitter(layout, *s.control, sc.species, trap, s.noise, s.samples, sc.seed, so);
  double worst = 0;
  for (int i = 0; i < 3; ++i) worst = std::max(worst, std::abs(mc.rms[i] - b.rms[i]) / b.rms[i]);
  v.check(worst <= 0.10, "linear vs Monte Carlo worst axis " + f(worst * 100, 3) + " %");
  const double ratio = b.rms.z / std::max(b.rms.x, b.rms.y);
  v.check(ratio >= 10.0, "rms_z / rms_xy = " + f(ratio, 3));
  v.check(b.rms.z >= 1.2e-9 / 3 && b.rms.z <= 1.2e-9 * 3, "dz_rms " + f(b.rms.z * 1e9, 3) + " nm");
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void determinism(Verdict& v) {
  const fs::path dir = fs::temp_directory_path() / "chiptrap_acceptance_determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto tag = [](json value, const char* unit) { return json{{"value", value}, {"unit", unit}}; };
  json cloud = {{"position", tag({360, 0, 250}, "um")}, {"temperature", tag(5, "uK")}, {"atoms", 25}};
  json cloud2 = cloud;
  cloud2["position"] = tag({1160, 0, 250}, "um");
  const json sweep = {{{"kind", "sweep"}, {"from", tag(0, "rad")}, {"to", tag(0.3, "rad")}, {"duration", tag(5, "ms")}}};
  const json doc = {
      {"seed", 2024},
      {"schedule", {{"form", "basic_conveyor"}}},
      {"analyze", {{"at", {{"phase", tag({0, 0.5}, "pi")}}}, {"x_step", tag(200, "um")}, {"depth", true}}},
      {"profile", {{"at", {{"phase", tag(0, "rad")}}}, {"samples", 61}}},
      {"optimize", {{"mode", "height"}, {"knots", 4}}},
      {"simulate",
       {{"experiment", "ensemble"}, {"clouds", {cloud}}, {"program", sweep}, {"snapshot_interval", tag(1, "ms")}}},
      {"scan",
       {{"v_max", tag({2, 4}, "cm/s")},
        {"distance", tag(1.6, "mm")},
        {"ramp_distance", tag(0.4, "mm")},
        {"atoms", 20}}},
      {"sensitivity",
       {{"control", {{"currents", {{"I1", tag(2, "A")}, {"IM1", tag(1, "A")}}}, {"bias", tag({5, 60, 0}, "G")}}},
        {"trap_seed", tag({4.4, 0, 0.08}, "mm")},
        {"samples", 100}}},
      {"frames",
       {{"clouds", {cloud, cloud2}},
        {"program", sweep},
        {"times", tag({0, 2.5, 5}, "ms")},
        {"frame", {{"grid", {120, 40}}, {"center", tag({0.76, 0.25}, "mm")}, {"blur", tag(10, "um")}}}}}};
  const fs::path scen = dir / "scenario.json";
  std::ofstream(scen) << doc.dump(2);

  const int wide = std::max(4, g_threads);
  std::size_t files = 0, same = 0;
  std::string failed;
  for (const auto& cmd : cli_commands()) {
    std::vector<fs::path> outs;
    bool ok = true;
    for (int run = 0; run < 3; ++run) {
      RunOptions o;
      o.command = cmd;
      o.scenario = scen;
      o.out = dir / (cmd + "_" + std::to_string(run));
      o.threads = run == 2 ? wide : 1;
      std::ostringstream out, err;
      const int code = run_command(o, out, err);
      ok = ok && (code == kExitOk || code == kExitPartial);
      outs.push_back(o.out);
    }
    for (const auto& e : fs::directory_iterator(outs[0])) {
      const std::string a = slurp(e.path());
      const bool eq = a == slurp(outs[1] / e.path().filename()) && a == slurp(outs[2] / e.path().filename());
      ++files;
      same += eq;
      ok = ok && eq;
    }
    if (!ok) failed += " " + cmd;
  }
  v.check(failed.empty() && files >= 15,
          std::to_string(same) + " of " + std::to_string(files) + " output files identical over 2 reruns and " +
              std::to_string(wide) + " threads" + (failed.empty() ? "" : ", differing:" + failed));
}

}  // namespace

int main(int argc, char** argv) {
  g_threads = std::max(1u, std::thread::hardware_concurrency());
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));
  const std::vector<std::pair<const char*, std::function<void(Verdict&)>>> criteria = {
      {"field oracle", field_oracle},
      {"side-guide height", side_guide},
      {"conveyor kinematics", conveyor_kinematics},
      {"Blackman pulse", blackman},
      {"energy units", energy_units},
      {"quantum formulas", quantum_formulas},
      {"optimizer", optimizer},
      {"dynamics", dynamics},
      {"split/merge", split_merge},
      {"dispenser", dispenser},
      {"sensitivity", sensitivity},
      {"determinism", determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Verdict v;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      criteria[i].second(v);
    } catch (const std::exception& e) {
      v.check(false, std::string("error: ") + e.what());
    }
    failures += !v.pass;
    std::cout << "criterion " << id << " (" << criteria[i].first << "): " << (v.pass ? "PASS" : "FAIL") << " - "
              << v.detail.str() << " (" << f(seconds_since(t0), 3) << " s)" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
