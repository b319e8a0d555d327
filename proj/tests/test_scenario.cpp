#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "chiptrap/cli.hpp"
#include "chiptrap/errors.hpp"
#include "chiptrap/frames.hpp"
#include "chiptrap/scenario.hpp"

using namespace chiptrap;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("chiptrap_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fs::path write_scenario(const fs::path& dir, const json& doc) {
  const fs::path p = dir / "scenario.json";
  std::ofstream(p) << doc.dump(2);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json tag(double v, const char* unit) { return {{"value", v}, {"unit", unit}}; }
json tag(std::vector<double> v, const char* unit) { return {{"value", v}, {"unit", unit}}; }

struct Run {
  int code;
  std::string out, err;
};

Run run(const std::string& command, const fs::path& scenario, const fs::path& out, int threads = 1,
        bool dry_run = false) {
  RunOptions o;
  o.command = command;
  o.scenario = scenario;
  o.out = out;
  o.threads = threads;
  o.dry_run = dry_run;
  std::ostringstream so, se;
  const int code = run_command(o, so, se);
  return {code, so.str(), se.str()};
}

std::string location_of(const json& doc) {
  try {
    parse_scenario(doc, {});
  } catch (const ParseError& e) {
    return e.location();
  }
  return "";
}

json two_clouds(double dx, std::size_t atoms) {
  json a = {{"position", tag({360, 0, 250}, "um")}, {"temperature", tag(5, "uK")}, {"atoms", atoms}};
  json b = a;
  b["position"] = tag({360 + dx, 0, 250}, "um");
  return json::array({a, b});
}

json frame_block() {
  return {{"projection", "y"},
          {"grid", {200, 40}},
          {"pixel", tag(10, "um")},
          {"center", tag({0.76, 0.25}, "mm")},
          {"blur", tag(10, "um")}};
}

}  // namespace

TEST_CASE("tagged units convert to SI and back") {
  const json doc = {{"seed", 1},
                    {"schedule", {{"form", "basic_conveyor"}, {"bias", tag({7, 16, 0}, "G")},
                                  {"central_current", tag(2000, "mA")}}},
                    {"phase_law", {{"omega", tag(2.0 / 150.0, "pi/ms")}}}};
  const Scenario sc = parse_scenario(doc, {});
  CHECK(sc.si["schedule"]["bias"][1].get<double>() == doctest::Approx(16e-4));
  CHECK(sc.si["schedule"]["central_current"].get<double>() == doctest::Approx(2.0));
  CHECK(sc.phase_law->omega == doctest::Approx(2.0 * units::pi / 0.150));
  const Schedule s = build_schedule(sc, build_layout(sc), 1);
  CHECK(s.at(0.0).bias.x == doctest::Approx(7e-4));

  const json tagged = sc.to_json();
  CHECK(tagged["schedule"]["bias"]["unit"] == "T");
  const Scenario back = parse_scenario(tagged, {});
  CHECK(back.si == sc.si);
}

TEST_CASE("unit factors reject the wrong dimension") {
  CHECK(unit_factor("uK", Dimension::Temperature) == doctest::Approx(1e-6));
  CHECK(unit_factor("mG/cm", Dimension::Gradient) == doctest::Approx(1e-5));
  CHECK_THROWS_AS(unit_factor("G", Dimension::Length), InvalidParameter);
  CHECK_THROWS_AS(unit_factor("furlong", Dimension::Length), InvalidParameter);
}

TEST_CASE("config errors carry the JSON path") {
  const json base = {{"seed", 1}, {"schedule", {{"form", "basic_conveyor"}}}};
  json bare = base;
  bare["schedule"]["bias"] = json::array({7, 16, 0});
  CHECK(location_of(bare) == "/schedule/bias");

  json wrong_unit = base;
  wrong_unit["schedule"]["bias"] = tag({7, 16, 0}, "mm");
  CHECK(location_of(wrong_unit) == "/schedule/bias");

  json unknown = base;
  unknown["analyze"] = {{"at", {{"phase", tag(0, "rad")}}}, {"x_stride", tag(1, "mm")}};
  CHECK(location_of(unknown) == "/analyze/x_stride");

  json no_seed = base;
  no_seed.erase("seed");
  CHECK(location_of(no_seed) == "/seed");

  json bad_instant = base;
  bad_instant["analyze"] = {{"at", {{"fraction", 0.5}}}};
  CHECK(location_of(bad_instant) == "/analyze/at");

  json bad_cloud = base;
  bad_cloud["frames"] = {{"times", tag(0, "s")}, {"clouds", {{{"temperature", tag(5, "uK")}}}}};
  CHECK(location_of(bad_cloud) == "/frames/clouds/0/position");
}

TEST_CASE("exit codes") {
  const fs::path dir = scratch("exit");
  SUBCASE("bad config") {
    const fs::path p = dir / "broken.json";
    std::ofstream(p) << "{\"seed\": 1, \"schedule\": {\"form\": \"basic_conveyor\", \"bias\": [1, 2, 3]}}";
    const Run r = run("analyze", p, dir / "out");
    CHECK(r.code == kExitConfig);
    CHECK(r.err.find("/schedule/bias") != std::string::npos);
    CHECK(run("analyze", dir / "missing.json", dir / "out").code == kExitConfig);
  }
  SUBCASE("bias only has no trap") {
    const json doc = {{"seed", 1},
                      {"schedule", {{"form", "constant"}, {"variable", "phase"},
                                    {"control", {{"bias", tag({0, 16, 0}, "G")}}}}},
                      {"analyze", {{"at", {{"phase", tag(0, "rad")}}}, {"x_step", tag(1, "mm")}}}};
    CHECK(run("analyze", write_scenario(dir, doc), dir / "out").code == kExitNoTrap);
  }
  SUBCASE("missing section") {
    const json doc = {{"seed", 1}, {"schedule", {{"form", "basic_conveyor"}}}};
    CHECK(run("scan", write_scenario(dir, doc), dir / "out").code == kExitConfig);
  }
}

TEST_CASE("analyze finds the conveyor wells") {
  const fs::path dir = scratch("analyze");
  const json doc = {{"seed", 1},
                    {"schedule", {{"form", "basic_conveyor"}}},
                    {"analyze", {{"at", {{"phase", tag(0, "rad")}}}, {"x_range", tag({-0.6, 5.4}, "mm")}}}};
  const Run r = run("analyze", write_scenario(dir, doc), dir / "out");
  REQUIRE(r.code == kExitOk);
  const json report = json::parse(slurp(dir / "out" / "analyze.json"));
  const auto& traps = report["instants"][0]["traps"];
  CHECK(traps.size() >= 5);
  for (std::size_t i = 2; i < traps.size() - 1; ++i) {
    const double dx = traps[i]["position_m"][0].get<double>() - traps[i - 1]["position_m"][0].get<double>();
    CHECK(dx == doctest::Approx(800e-6).epsilon(0.02));
  }
}

TEST_CASE("dry run validates without writing") {
  const fs::path dir = scratch("dry");
  const json doc = {{"seed", 1},
                    {"schedule", {{"form", "basic_conveyor"}}},
                    {"analyze", {{"at", {{"phase", tag(0, "rad")}}}}}};
  const Run r = run("analyze", write_scenario(dir, doc), dir / "out", 1, true);
  CHECK(r.code == kExitOk);
  CHECK_FALSE(fs::exists(dir / "out"));
  const json plan = json::parse(r.out);
  CHECK(plan["outputs"][0] == "analyze.json");
}

TEST_CASE("static frames show two clouds 800 um apart") {
  const fs::path dir = scratch("frames");
  const json doc = {{"seed", 3},
                    {"schedule", {{"form", "basic_conveyor"}}},
                    {"frames", {{"clouds", two_clouds(800, 400)}, {"times", tag(0, "s")}, {"frame", frame_block()}}}};
  const fs::path p = write_scenario(dir, doc);
  REQUIRE(run("frames", p, dir / "out").code == kExitOk);
  const Scenario sc = load_scenario(p);
  const DensityImage img = read_pgm16(dir / "out" / "frame_000.pgm");
  CHECK(img.peak() == 65535.0);
  const auto maxima = profile_maxima(img, sc.frames->frame);
  REQUIRE(maxima.size() == 2);
  CHECK(maxima[1] - maxima[0] == doctest::Approx(800e-6).epsilon(0.05));
}

TEST_CASE("an empty ensemble renders a zero image") {
  const fs::path dir = scratch("empty");
  json clouds = two_clouds(800, 0);
  const json doc = {{"seed", 3},
                    {"schedule", {{"form", "basic_conveyor"}}},
                    {"frames", {{"clouds", clouds}, {"times", tag({0, 1}, "ms")}, {"frame", frame_block()}}}};
  REQUIRE(run("frames", write_scenario(dir, doc), dir / "out").code == kExitOk);
  for (const char* f : {"frame_000.pgm", "frame_001.pgm"}) CHECK(read_pgm16(dir / "out" / f).peak() == 0.0);
}

TEST_CASE("time of flight expands and drops the cloud") {
  EnsembleState s;
  s.mass = SpeciesParams::rb87().mass;
  for (int i = 0; i < 4; ++i) {
    s.positions.push_back({1e-3, 0.0, 250e-6});
    s.velocities.push_back({i % 2 ? 5e-3 : -5e-3, 0.0, 0.0});
    s.alive.push_back(true);
    s.majorana.push_back(false);
  }
  const Vec3 g = SpeciesParams::rb87().gravity;
  const EnsembleState f = free_flight(s, 2e-3, g);
  CHECK(f.positions[1].x - f.positions[0].x == doctest::Approx(20e-6));
  CHECK(f.positions[0].z - 250e-6 == doctest::Approx(0.5 * g.z * 4e-6));

  FrameConfig frame;
  frame.nx = 100;
  frame.nz = 50;
  frame.pixel = 2e-6;
  frame.center_h = 1e-3;
  frame.center_v = 260e-6;
  frame.tof = 2e-3;
  const auto maxima = profile_maxima(render_density(s, frame, g), frame, 0.2, 0);
  REQUIRE(maxima.size() == 2);
  CHECK(maxima[1] - maxima[0] == doctest::Approx(20e-6).epsilon(0.1));
}

TEST_CASE("pgm round trip keeps 16-bit values") {
  const fs::path dir = scratch("pgm");
  DensityImage img;
  img.nx = 3;
  img.nz = 2;
  img.counts = {0.0, 1.0, 2.0, 3.0, 4.0, 400.0};
  write_pgm16(img, 200.0, dir / "a.pgm");
  const DensityImage back = read_pgm16(dir / "a.pgm");
  CHECK(back.at(1, 0) == 200.0);
  CHECK(back.at(1, 1) == 800.0);
  CHECK(back.at(2, 1) == 65535.0);
}

TEST_CASE("outputs are byte-identical across reruns and thread counts") {
  const fs::path dir = scratch("determinism");
  const json doc = {
      {"seed", 11},
      {"schedule", {{"form", "basic_conveyor"}}},
      {"analyze", {{"at", {{"phase", tag({0, 1}, "pi")}}}, {"x_step", tag(200, "um")}}},
      {"profile", {{"at", {{"phase", tag(0, "rad")}}}, {"samples", 41}}},
      {"sensitivity",
       {{"control", {{"currents", {{"I1", tag(2, "A")}, {"IM1", tag(1, "A")}}}, {"bias", tag({5, 60, 0}, "G")}}},
        {"trap_seed", tag({4.4, 0, 0.08}, "mm")},
        {"samples", 100}}},
      {"simulate",
       {{"experiment", "ensemble"},
        {"clouds", two_clouds(800, 30)},
        {"program", {{{"kind", "sweep"}, {"from", tag(0, "rad")}, {"to", tag(0.2, "rad")}, {"duration", tag(5, "ms")}}}},
        {"snapshot_interval", tag(1, "ms")}}},
      {"frames",
       {{"clouds", two_clouds(800, 30)},
        {"program", {{{"kind", "sweep"}, {"from", tag(0, "rad")}, {"to", tag(0.2, "rad")}, {"duration", tag(5, "ms")}}}},
        {"times", tag({0, 5}, "ms")},
        {"frame", frame_block()}}}};
  const fs::path p = write_scenario(dir, doc);
  for (const std::string cmd : {"analyze", "profile", "sensitivity", "simulate", "frames"}) {
    CAPTURE(cmd);
    REQUIRE(run(cmd, p, dir / "a", 1).code == kExitOk);
    REQUIRE(run(cmd, p, dir / "b", 1).code == kExitOk);
    REQUIRE(run(cmd, p, dir / "c", 3).code == kExitOk);
  }
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir / "a")) {
    const auto name = e.path().filename();
    CAPTURE(name.string());
    const std::string a = slurp(e.path());
    CHECK(a == slurp(dir / "b" / name));
    CHECK(a == slurp(dir / "c" / name));
    ++files;
  }
  CHECK(files >= 10);
}
