#include <doctest.h>

#include <cmath>

#include "chiptrap/errors.hpp"
#include "chiptrap/optimizer.hpp"

using namespace chiptrap;
using units::gauss;
using units::pi;

namespace {

// Quartic double well along x whose sides are deepened by the two knobs; mirror symmetric
// under x -> -x with IM1 <-> IM2.
class TiltedDoubleWell final : public EnergyLandscape {
 public:
  explicit TiltedDoubleWell(const ControlVector& c) : a1_(c.current("IM1")), a2_(c.current("IM2")) {}
  double energy(const Vec3& p) const override {
    const double q = (p.x * p.x - s_ * s_) / (s_ * s_);
    const double t = 0.5 * k_ * (p.y * p.y + (p.z - z0_) * (p.z - z0_));
    return e0_ * q * q - e1_ * (a1_ * bump(p.x + s_) + a2_ * bump(p.x - s_)) + t;
  }
  Vec3 gradient(const Vec3& p) const override {
    const double q = (p.x * p.x - s_ * s_) / (s_ * s_);
    const double gx = e0_ * 2.0 * q * 2.0 * p.x / (s_ * s_) -
                      e1_ * (a1_ * dbump(p.x + s_) + a2_ * dbump(p.x - s_));
    return {gx, k_ * p.y, k_ * (p.z - z0_)};
  }
  double mass() const override { return units::rb87_mass; }

 private:
  double bump(double u) const { return std::exp(-u * u / (w_ * w_)); }
  double dbump(double u) const { return -2.0 * u / (w_ * w_) * bump(u); }

  double a1_, a2_;
  double s_ = 60e-6;
  double w_ = 30e-6;
  double z0_ = 100e-6;
  double e0_ = units::k_boltzmann * 5e-6;
  double e1_ = units::k_boltzmann * 1e-6;
  double k_ = units::rb87_mass * std::pow(2 * pi * 500.0, 2);
};

TrapTarget full_target(double x, const Vec3& seed) {
  TrapTarget t;
  t.x_target = x;
  t.x_tol = 1e-6;
  t.z_target = 260e-6;
  t.z_tol = 1e-6;
  t.freq_targets = {{Axis::X, 60.0, 1.5}, {Axis::Z, 400.0, 2.5}};
  t.free_knobs = {"Bx", "By", "IM1", "IM2"};
  t.seed = seed;
  return t;
}

std::vector<SweepKnot> full_sweep_knots(const ChipLayout& layout, int n) {
  const auto sp = SpeciesParams::rb87();
  std::vector<SweepKnot> knots;
  const auto start = find_minimum(layout, basic_conveyor(0.0), sp, {2.4e-3, 0, 250e-6});
  for (int k = 0; k < n; ++k) {
    const double phi = 2 * pi * k / n;
    const double x = start.position.x + 800e-6 * phi / (2 * pi);
    knots.push_back({phi, basic_conveyor(phi), full_target(x, {x, 0, 260e-6})});
  }
  return knots;
}

BalanceOptions split_window() {
  BalanceOptions o;
  o.x_lo = 1.3e-3;
  o.x_hi = 1.7e-3;
  o.seed_z = 90e-6;
  return o;
}

}  // namespace

TEST_CASE("knobs address currents and bias components") {
  ControlVector c;
  set_knob(c, "I0", 1.5);
  set_knob(c, "By", 16 * gauss);
  CHECK(knob_value(c, "I0") == 1.5);
  CHECK(c.bias.y == 16 * gauss);
  CHECK(knob_value(c, "Bx") == 0.0);
  CHECK(is_bias_knob("Bz"));
  CHECK_FALSE(is_bias_knob("IM1"));
  CHECK(axis_from_string("z") == Axis::Z);
  CHECK_THROWS_AS(axis_from_string("w"), InvalidParameter);
}

TEST_CASE("targets without knobs, constraints or positive tolerances are rejected") {
  TrapTarget t;
  t.z_target = 1e-4;
  CHECK_THROWS_AS(t.validate(), InvalidParameter);
  t.free_knobs = {"I0"};
  t.validate();
  t.z_tol = 0.0;
  CHECK_THROWS_AS(t.validate(), InvalidParameter);
  t.z_tol = 1e-6;
  t.free_knobs = {"I0", "I0"};
  CHECK_THROWS_AS(t.validate(), InvalidParameter);
  TrapTarget none;
  none.free_knobs = {"I0"};
  CHECK_THROWS_AS(none.validate(), InvalidParameter);
}

TEST_CASE("a target equal to the achieved trap returns the initial controls") {
  const auto layout = canonical_layout();
  const auto sp = SpeciesParams::rb87();
  const ControlVector c = basic_conveyor(0.7);
  const auto t0 = find_minimum(layout, c, sp, {2.4e-3, 0, 250e-6});
  TrapTarget t;
  t.z_target = t0.position.z;
  t.freq_targets = {{Axis::X, t0.frequency_along({1, 0, 0}), 1.0}};
  t.free_knobs = {"I0", "By"};
  t.seed = t0.position;
  const SolveResult r = solve_target(layout, sp, t, c);
  CHECK(r.converged);
  CHECK(r.ctrl == c);
  CHECK(r.trap_solves == 1);
}

TEST_CASE("missing trap at the initial controls is a trap error") {
  TrapTarget t;
  t.z_target = 250e-6;
  t.free_knobs = {"I0"};
  t.seed = {2e-3, 0, 250e-6};
  CHECK_THROWS_AS(solve_target(canonical_layout(), SpeciesParams::rb87(), t, ControlVector{}), TrapError);
}

TEST_CASE("height-only sweep flattens the conveyor height") {
  const auto layout = canonical_layout();
  const HeightOnlyResult r = optimize_height(layout, SpeciesParams::rb87(), basic_conveyor_schedule());
  REQUIRE(r.optimized.all_converged());
  REQUIRE(r.optimized.knots.size() == 32);
  auto p2p = [](auto get, const auto& items) {
    double lo = 1, hi = -1;
    for (const auto& it : items) {
      lo = std::min(lo, get(it));
      hi = std::max(hi, get(it));
    }
    return hi - lo;
  };
  const double before = p2p([](const TrapCharacterization& t) { return t.position.z; }, r.reference);
  const double after = p2p([](const OptimizedKnot& k) { return k.trap.position.z; }, r.optimized.knots);
  CHECK(before > 3.0 * after);
  // central current peaks where both meanders oppose it
  std::size_t imax = 0;
  for (std::size_t i = 0; i < r.optimized.knots.size(); ++i)
    if (r.optimized.knots[i].ctrl.current("I0") > r.optimized.knots[imax].ctrl.current("I0")) imax = i;
  CHECK(std::abs(r.optimized.knots[imax].s - 3 * pi / 4) <= 2 * (2 * pi / 32) + 1e-12);
  // the bias knob works as well
  HeightOnlyOptions by;
  by.vary_bias_y = true;
  by.knots = 8;
  const HeightOnlyResult rb = optimize_height(layout, SpeciesParams::rb87(), basic_conveyor_schedule(), by);
  CHECK(rb.optimized.all_converged());
  CHECK(rb.optimized.knots[0].ctrl.current("I0") == 2.0);
}

TEST_CASE("optimized schedule is a periodic table through the knots") {
  const HeightOnlyResult r = optimize_height(canonical_layout(), SpeciesParams::rb87(), basic_conveyor_schedule(),
                                             HeightOnlyOptions{.knots = 8});
  const Schedule s = r.optimized.schedule();
  CHECK(s.periodic());
  for (const auto& k : r.optimized.knots) CHECK(s.at(k.s).current("I0") == doctest::Approx(k.ctrl.current("I0")));
  CHECK(s.at(2 * pi).current("I0") == doctest::Approx(s.at(0.0).current("I0")));
  const auto report = r.optimized.report();
  CHECK(report["knots"].size() == 8);
  CHECK(report.contains("nu_y_range_Hz"));
}

TEST_CASE("a one-knot sweep gives a constant schedule") {
  const HeightOnlyResult r = optimize_height(canonical_layout(), SpeciesParams::rb87(), basic_conveyor_schedule(),
                                             HeightOnlyOptions{.knots = 1});
  const Schedule s = r.optimized.schedule();
  CHECK(s.at(0.0) == s.at(1.0));
}

TEST_CASE("full optimization at one knot meets the transport tolerances") {
  const auto layout = canonical_layout();
  const auto sp = SpeciesParams::rb87();
  const auto knots = full_sweep_knots(layout, 8);
  const SweepKnot& k = knots[3];
  const SolveResult r = solve_target(layout, sp, k.target, k.base);
  REQUIRE(r.converged);
  CHECK(std::abs(r.trap.position.z - 260e-6) <= 1e-6);
  CHECK(std::abs(r.trap.frequency_along({1, 0, 0}) - 60.0) <= 1.5);
  CHECK(std::abs(r.trap.frequency_along({0, 0, 1}) - 400.0) <= 2.5);
  // residual contract: a fresh search from a displaced seed stays within twice the tolerances
  const auto again = find_minimum(layout, r.ctrl, sp, r.trap.position + Vec3{20e-6, 10e-6, -15e-6});
  for (double v : target_residuals(k.target, again)) CHECK(std::abs(v) <= 2.0);
}

TEST_CASE("knob Jacobian is stable under halving the difference step") {
  const auto layout = canonical_layout();
  const auto sp = SpeciesParams::rb87();
  const auto knots = full_sweep_knots(layout, 8);
  const SweepKnot& k = knots[2];
  const auto seed = find_minimum(layout, k.base, sp, k.target.seed).position;
  const auto J1 = residual_jacobian(layout, sp, k.target, k.base, seed);
  const auto J2 = residual_jacobian(layout, sp, k.target, k.base, seed, {}, 0.5);
  double scale = 0;
  for (const auto& row : J1)
    for (double v : row) scale = std::max(scale, std::abs(v));
  for (std::size_t i = 0; i < J1.size(); ++i)
    for (std::size_t j = 0; j < J1[i].size(); ++j) {
      // components far below the matrix scale are dominated by rounding
      if (std::abs(J1[i][j]) < 1e-3 * scale) continue;
      CHECK(J2[i][j] == doctest::Approx(J1[i][j]).epsilon(0.05));
    }
}

TEST_CASE("full sweep meets the tolerances at every knot and reports the y frequency") {
  const auto layout = canonical_layout();
  const OptimizedSchedule s = sweep_schedule(layout, SpeciesParams::rb87(), full_sweep_knots(layout, 8), true);
  REQUIRE(s.all_converged());
  for (const auto& k : s.knots) {
    CHECK(std::abs(k.trap.position.z - 260e-6) <= 1e-6);
    CHECK(std::abs(k.trap.frequency_along({1, 0, 0}) - 60.0) <= 1.5);
    CHECK(std::abs(k.trap.frequency_along({0, 0, 1}) - 400.0) <= 2.5);
  }
  const auto range = s.report()["nu_y_range_Hz"];
  CHECK(range[0].get<double>() > 300.0);
  CHECK(range[1].get<double>() < 450.0);
}

TEST_CASE("continuation does not change a well-conditioned sweep, and threads do not change a cold one") {
  const auto layout = canonical_layout();
  const auto sp = SpeciesParams::rb87();
  const auto knots = full_sweep_knots(layout, 8);
  const OptimizedSchedule warm = sweep_schedule(layout, sp, knots, true);
  const OptimizedSchedule cold = sweep_schedule(layout, sp, knots, false);
  const OptimizedSchedule cold3 = sweep_schedule(layout, sp, knots, false, {}, 3);
  REQUIRE(warm.all_converged());
  REQUIRE(cold.all_converged());
  for (std::size_t i = 0; i < knots.size(); ++i) {
    CHECK(std::abs(warm.knots[i].trap.position.z - cold.knots[i].trap.position.z) <= 2e-6);
    CHECK(std::abs(warm.knots[i].trap.position.x - cold.knots[i].trap.position.x) <= 2e-6);
    CHECK(cold.knots[i].ctrl == cold3.knots[i].ctrl);
  }
  CHECK(cold.report().dump() == cold3.report().dump());
}

TEST_CASE("a knot without a trap stops the sweep with a partial result") {
  auto knots = full_sweep_knots(canonical_layout(), 4);
  knots[2].base = ControlVector{};
  const OptimizedSchedule s = sweep_schedule(canonical_layout(), SpeciesParams::rb87(), knots, false);
  CHECK_FALSE(s.complete);
  CHECK(s.knots.size() == 2);
  CHECK(s.error.find("knot 2") == 0);
}

TEST_CASE("valley scan finds both wells and the saddle of a synthetic double well") {
  ControlVector c;
  c.set("IM1", 0.0);
  c.set("IM2", 0.0);
  const TiltedDoubleWell w(c);
  const ValleyExtrema v = valley_double_well(w, -150e-6, 150e-6, 121, 0.0, 100e-6);
  CHECK(v.left_x == doctest::Approx(-60e-6).epsilon(0.02));
  CHECK(v.right_x == doctest::Approx(60e-6).epsilon(0.02));
  CHECK(std::abs(v.saddle_x) < 1e-6);
  CHECK(v.left_point.z == doctest::Approx(100e-6));
  CHECK_THROWS_AS(valley_double_well(w, 10e-6, 150e-6, 121, 0.0, 100e-6), MultiplicityError);
}

TEST_CASE("balancing a mirror-symmetric double well gives symmetric knobs") {
  ControlVector c;
  c.set("IM1", 0.3);
  c.set("IM2", 0.5);
  const LandscapeFactory f = [](const ControlVector& cv) -> std::unique_ptr<EnergyLandscape> {
    return std::make_unique<TiltedDoubleWell>(cv);
  };
  BalanceOptions o;
  o.x_lo = -150e-6;
  o.x_hi = 150e-6;
  const BalanceResult r = balance_double_well(f, std::vector<Knob>{"IM1", "IM2"}, c, 1e-6, o);
  REQUIRE(r.converged);
  CHECK(std::abs(r.ctrl.current("IM1") - r.ctrl.current("IM2")) < 0.01);
  CHECK(r.left_fraction == doctest::Approx(0.5).epsilon(0.01));
}

TEST_CASE("BEC split balance lands near -0.28 A on both meanders and follows an imposed gradient") {
  const auto layout = canonical_layout();
  const auto sp = SpeciesParams::rb87();
  std::vector<double> diff;
  for (double g : {-0.01, 0.0, 0.01}) {
    ControlVector c = split_ramp_bec(1.0);
    c.gradient = axial_gradient(g);
    const BalanceResult r = balance_double_well(layout, sp, std::vector<Knob>{"IM1", "IM2"}, c, 1e-6, split_window());
    REQUIRE(r.converged);
    for (const char* ch : {"IM1", "IM2"}) {
      CHECK(r.ctrl.current(ch) > -0.400);
      CHECK(r.ctrl.current(ch) < -0.150);
    }
    CHECK(r.left_fraction == doctest::Approx(0.5).epsilon(0.01));
    diff.push_back(r.ctrl.current("IM1") - r.ctrl.current("IM2"));
  }
  // monotone in the gradient, with the sign following the gradient sign
  CHECK((diff[1] - diff[0]) * (diff[2] - diff[1]) > 0.0);
  CHECK(std::abs(diff[2] - diff[0]) > 1e-3);
}

TEST_CASE("balance needs a double well in the window") {
  ControlVector c = split_ramp_bec(0.0);
  CHECK_THROWS_AS(balance_double_well(canonical_layout(), SpeciesParams::rb87(), std::vector<Knob>{"IM1", "IM2"}, c, 1e-6,
                                      split_window()),
                  MultiplicityError);
  CHECK_THROWS_AS(balance_double_well(canonical_layout(), SpeciesParams::rb87(), std::vector<Knob>{"IM1", "IM2"}, c, 0.0,
                                      split_window()),
                  InvalidParameter);
}
