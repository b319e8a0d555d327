#include <doctest.h>

#include <cmath>
#include <sstream>

#include "chiptrap/errors.hpp"
#include "chiptrap/sensitivity.hpp"

using namespace chiptrap;
using units::gauss;

namespace {

SpeciesParams weightless() {
  SpeciesParams s = SpeciesParams::rb87();
  s.gravity = {};
  return s;
}

// Z-shaped wire: 10 mm centre along x, leads along -y and +y.
ChipLayout z_wire() {
  const double L = 5e-3, lead = 10e-3;
  return ChipLayout({"Z"}, {{{-L, -lead, 0}, {-L, 0, 0}, "Z"},
                            {{-L, 0, 0}, {L, 0, 0}, "Z"},
                            {{L, 0, 0}, {L, lead, 0}, "Z"}});
}

ControlVector high_confinement() {
  ControlVector c;
  c.set("I1", 2.0);
  c.set("IM1", 1.0);
  c.bias = {5 * gauss, 60 * gauss, 0};
  return c;
}

const TrapCharacterization& high_confinement_trap() {
  static const TrapCharacterization t =
      find_minimum(canonical_layout(), high_confinement(), SpeciesParams::rb87(), {4.4e-3, 0, 80e-6});
  return t;
}

Vec3 channel_response(const JitterBudget& b, const ChannelId& ch) {
  for (const auto& r : b.dpos_dI)
    if (r.channel == ch) return r.dpos;
  FAIL("missing channel " << ch);
  return {};
}

}  // namespace

TEST_CASE("Z-wire height responds like d = mu0 I / (2 pi B)") {
  ControlVector c;
  c.set("Z", 2.0);
  c.bias = {1 * gauss, 16 * gauss, 0};
  const auto layout = z_wire();
  const auto trap = find_minimum(layout, c, weightless(), {0, 0, 250e-6});
  const double d = trap.position.z;
  const JitterBudget b = linear_response(layout, c, weightless(), trap);
  CHECK_FALSE(b.nonlinear);
  CHECK(channel_response(b, "Z").z == doctest::Approx(d / 2.0).epsilon(0.02));
  CHECK(b.dpos_dB[2][1] == doctest::Approx(-d / (16 * gauss)).epsilon(0.02));
  // mirror symmetry in x keeps the trap centred
  CHECK(std::abs(channel_response(b, "Z").x) < 1e-3 * std::abs(channel_response(b, "Z").z));
  // in the mirror-symmetric trap current noise is purely vertical
  CHECK(b.rms_current.z >= 10 * std::max(b.rms_current.x, b.rms_current.y));
}

TEST_CASE("scaling every source together leaves a weightless trap in place") {
  const auto layout = canonical_layout();
  const auto c = high_confinement();
  const auto trap = find_minimum(layout, c, weightless(), {4.4e-3, 0, 80e-6});
  const JitterBudget b = linear_response(layout, c, weightless(), trap);
  Vec3 sum, scale;
  for (const auto& r : b.dpos_dI) {
    sum += r.dpos * r.current;
    scale += Vec3{std::abs(r.dpos.x * r.current), std::abs(r.dpos.y * r.current), std::abs(r.dpos.z * r.current)};
  }
  for (int j = 0; j < 3; ++j)
    for (int i = 0; i < 3; ++i) {
      sum[i] += b.dpos_dB[i][j] * c.bias[j];
      scale[i] += std::abs(b.dpos_dB[i][j] * c.bias[j]);
    }
  CHECK(std::abs(sum.z) < 1e-3 * scale.z);
}

TEST_CASE("high-confinement trap: current noise acts mostly along z, at the nanometre level") {
  const JitterBudget b =
      linear_response(canonical_layout(), high_confinement(), SpeciesParams::rb87(), high_confinement_trap());
  CHECK_FALSE(b.nonlinear);
  const double planar = std::max(b.rms_current.x, b.rms_current.y);
  CHECK(b.rms_current.z > 2 * planar);
  CHECK(b.rms_current.z > 1.2e-9 / 3);
  CHECK(b.rms_current.z < 1.2e-9 * 3);
  CHECK(b.rms == b.rms_current);
  MESSAGE("dz_rms = " << b.rms_current.z * 1e9 << " nm, planar " << planar * 1e9 << " nm");
}

TEST_CASE("centred differences are converged in the step") {
  const auto layout = canonical_layout();
  const auto c = high_confinement();
  const auto& trap = high_confinement_trap();
  SensitivityOptions half;
  half.current_rel_step /= 2;
  half.field_step /= 2;
  half.gradient_step /= 2;
  const JitterBudget a = linear_response(layout, c, SpeciesParams::rb87(), trap);
  const JitterBudget b = linear_response(layout, c, SpeciesParams::rb87(), trap, NoiseModel::currents_only(), half);
  for (const char* ch : {"I1", "IM1"})
    CHECK(channel_response(b, ch).z == doctest::Approx(channel_response(a, ch).z).epsilon(0.01));
  for (int j = 0; j < 2; ++j) CHECK(b.dpos_dB[2][j] == doctest::Approx(a.dpos_dB[2][j]).epsilon(0.01));
  CHECK(b.dpos_dgrad.x == doctest::Approx(a.dpos_dgrad.x).epsilon(0.01));
}

TEST_CASE("zero noise gives zero jitter") {
  const JitterBudget b = linear_response(canonical_layout(), high_confinement(), SpeciesParams::rb87(),
                                         high_confinement_trap(), NoiseModel::currents_only(0.0));
  CHECK(b.rms == Vec3{});
}

TEST_CASE("Monte Carlo matches the linear budget") {
  const auto layout = canonical_layout();
  const auto c = high_confinement();
  const auto& trap = high_confinement_trap();
  for (const NoiseModel& noise : {NoiseModel::currents_only(), NoiseModel::with_ambient()}) {
    const JitterBudget b = linear_response(layout, c, SpeciesParams::rb87(), trap, noise);
    const MonteCarloJitter mc = monte_carlo_jitter(layout, c, SpeciesParams::rb87(), trap, noise, 400, 11);
    CHECK(mc.lost == 0);
    CHECK(mc.rms.z == doctest::Approx(b.rms.z).epsilon(0.10));
    if (noise.ambient_gradient > 0) {
      CHECK(mc.rms.x == doctest::Approx(b.rms.x).epsilon(0.10));
      CHECK(mc.rms.y == doctest::Approx(b.rms.y).epsilon(0.10));
    }
    CHECK(mc.rms_error.z > 0);
    CHECK(mc.rms_error.z < 0.1 * mc.rms.z);
  }
}

TEST_CASE("doubling the sample count keeps the rms within its error bar") {
  const auto layout = canonical_layout();
  const auto c = high_confinement();
  const auto& trap = high_confinement_trap();
  const auto a = monte_carlo_jitter(layout, c, SpeciesParams::rb87(), trap, NoiseModel::currents_only(), 200, 3);
  const auto b = monte_carlo_jitter(layout, c, SpeciesParams::rb87(), trap, NoiseModel::currents_only(), 400, 3);
  CHECK(std::abs(a.rms.z - b.rms.z) < 3 * std::hypot(a.rms_error.z, b.rms_error.z));
}

TEST_CASE("weak ambient field noise stays below the current-noise z jitter") {
  const auto layout = canonical_layout();
  const auto c = high_confinement();
  const auto& trap = high_confinement_trap();
  NoiseModel ambient = NoiseModel::currents_only(0.0);
  ambient.ambient_field = {0, 0.2 * units::milligauss, 0.2 * units::milligauss};
  const JitterBudget cur = linear_response(layout, c, SpeciesParams::rb87(), trap);
  const JitterBudget amb = linear_response(layout, c, SpeciesParams::rb87(), trap, ambient);
  CHECK(std::hypot(amb.rms.y, amb.rms.z) < cur.rms.z);
}

TEST_CASE("Monte Carlo is deterministic across thread counts") {
  const auto layout = canonical_layout();
  const auto c = high_confinement();
  const auto& trap = high_confinement_trap();
  SensitivityOptions four;
  four.threads = 4;
  const auto a = monte_carlo_jitter(layout, c, SpeciesParams::rb87(), trap, NoiseModel::with_ambient(), 100, 9);
  const auto b = monte_carlo_jitter(layout, c, SpeciesParams::rb87(), trap, NoiseModel::with_ambient(), 100, 9, four);
  CHECK(a.rms == b.rms);
  CHECK(a.histograms[2].counts == b.histograms[2].counts);
  std::ostringstream sa, sb;
  write_histogram_csv(sa, a);
  write_histogram_csv(sb, b);
  CHECK(sa.str() == sb.str());
  const JitterBudget lb = linear_response(layout, c, SpeciesParams::rb87(), trap, NoiseModel::with_ambient());
  const JitterBudget lb4 = linear_response(layout, c, SpeciesParams::rb87(), trap, NoiseModel::with_ambient(), four);
  CHECK(budget_json(lb, &a) == budget_json(lb4, &b));
}

TEST_CASE("sensitivity input validation") {
  const auto layout = canonical_layout();
  const auto c = high_confinement();
  const auto& trap = high_confinement_trap();
  CHECK_THROWS_AS(monte_carlo_jitter(layout, c, SpeciesParams::rb87(), trap, NoiseModel{}, 99, 1), InvalidParameter);
  NoiseModel bad;
  bad.current_rel = -1;
  CHECK_THROWS_AS(linear_response(layout, c, SpeciesParams::rb87(), trap, bad), InvalidParameter);
}
