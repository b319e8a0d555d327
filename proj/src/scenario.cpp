#include "chiptrap/scenario.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "chiptrap/errors.hpp"

namespace chiptrap {

using nlohmann::json;

namespace {

struct UnitEntry {
  Dimension dim;
  double factor;
};

const std::map<std::string, UnitEntry>& unit_table() {
  static const std::map<std::string, UnitEntry> t = {
      {"m", {Dimension::Length, 1.0}},         {"cm", {Dimension::Length, 1e-2}},
      {"mm", {Dimension::Length, 1e-3}},       {"um", {Dimension::Length, 1e-6}},
      {"µm", {Dimension::Length, 1e-6}},       {"nm", {Dimension::Length, 1e-9}},
      {"A", {Dimension::Current, 1.0}},        {"mA", {Dimension::Current, 1e-3}},
      {"T", {Dimension::Field, 1.0}},          {"G", {Dimension::Field, 1e-4}},
      {"mG", {Dimension::Field, 1e-7}},        {"T/m", {Dimension::Gradient, 1.0}},
      {"G/cm", {Dimension::Gradient, 1e-2}},   {"mG/cm", {Dimension::Gradient, 1e-5}},
      {"s", {Dimension::Time, 1.0}},           {"ms", {Dimension::Time, 1e-3}},
      {"us", {Dimension::Time, 1e-6}},         {"µs", {Dimension::Time, 1e-6}},
      {"K", {Dimension::Temperature, 1.0}},    {"mK", {Dimension::Temperature, 1e-3}},
      {"uK", {Dimension::Temperature, 1e-6}},  {"µK", {Dimension::Temperature, 1e-6}},
      {"nK", {Dimension::Temperature, 1e-9}},  {"m/s", {Dimension::Velocity, 1.0}},
      {"cm/s", {Dimension::Velocity, 1e-2}},   {"mm/s", {Dimension::Velocity, 1e-3}},
      {"Hz", {Dimension::Frequency, 1.0}},     {"kHz", {Dimension::Frequency, 1e3}},
      {"rad", {Dimension::Angle, 1.0}},        {"deg", {Dimension::Angle, units::pi / 180.0}},
      {"pi", {Dimension::Angle, units::pi}},   {"rad/s", {Dimension::AngularRate, 1.0}},
      {"pi/s", {Dimension::AngularRate, units::pi}}, {"pi/ms", {Dimension::AngularRate, 1e3 * units::pi}},
      {"kg", {Dimension::Mass, 1.0}},          {"amu", {Dimension::Mass, 1.66053906660e-27}},
      {"m/s2", {Dimension::Acceleration, 1.0}}, {"m/s^2", {Dimension::Acceleration, 1.0}},
  };
  return t;
}

const char* dimension_name(Dimension d) {
  switch (d) {
    case Dimension::None: return "dimensionless";
    case Dimension::Length: return "length";
    case Dimension::Current: return "current";
    case Dimension::Field: return "magnetic field";
    case Dimension::Gradient: return "field gradient";
    case Dimension::Time: return "time";
    case Dimension::Temperature: return "temperature";
    case Dimension::Velocity: return "velocity";
    case Dimension::Frequency: return "frequency";
    case Dimension::Angle: return "angle";
    case Dimension::AngularRate: return "angular rate";
    case Dimension::Mass: return "mass";
    case Dimension::Acceleration: return "acceleration";
  }
  return "?";
}

const std::map<std::string, Dimension>& key_table() {
  using D = Dimension;
  static const std::map<std::string, Dimension> t = {
      {"position", D::Length},       {"trap_seed", D::Length},     {"x_range", D::Length},
      {"x_lo", D::Length},           {"x_hi", D::Length},          {"x_step", D::Length},
      {"z_seeds", D::Length},        {"seed_z", D::Length},        {"pixel", D::Length},
      {"center", D::Length},         {"blur", D::Length},          {"distance", D::Length},
      {"ramp_distance", D::Length},  {"period", D::Length},        {"z", D::Length},
      {"z_ref", D::Length},          {"x_tol", D::Length},         {"z_tol", D::Length},
      {"box_lo", D::Length},         {"box_hi", D::Length},        {"strip_width", D::Length},
      {"central_current", D::Current}, {"amplitude", D::Current},  {"i0_start", D::Current},
      {"i0_end", D::Current},        {"im1", D::Current},          {"im2", D::Current},
      {"i1", D::Current},            {"iq", D::Current},           {"ih1", D::Current},
      {"ih1_initial", D::Current},   {"skip_current", D::Current}, {"bias", D::Field},
      {"ambient_field", D::Field},   {"gradient_x", D::Gradient},  {"ambient_gradient", D::Gradient},
      {"duration", D::Time},         {"half_duration", D::Time},   {"time", D::Time},
      {"times", D::Time},            {"tof", D::Time},             {"snapshot_interval", D::Time},
      {"half_cycle", D::Time},       {"dt", D::Time},              {"temperature", D::Temperature},
      {"v_max", D::Velocity},        {"nu_x", D::Frequency},       {"nu_z", D::Frequency},
      {"nu_x_tol", D::Frequency},    {"nu_z_tol", D::Frequency},   {"nu_max", D::Frequency},
      {"phase", D::Angle},           {"from", D::Angle},           {"to", D::Angle},
      {"phi0", D::Angle},            {"omega", D::AngularRate},    {"mass", D::Mass},
      {"gravity", D::Acceleration},
  };
  return t;
}

std::string child_path(const std::string& path, const std::string& key) { return path + "/" + key; }

bool is_tagged(const json& j) {
  return j.is_object() && j.size() == 2 && j.contains("value") && j.contains("unit") && j["unit"].is_string();
}

bool all_numbers(const json& j) {
  if (!j.is_array() || j.empty()) return false;
  for (const auto& v : j)
    if (!v.is_number()) return false;
  return true;
}

json convert_si(const json& node, const std::string& key, const std::string& parent, const std::string& path) {
  const Dimension dim = key_dimension(key, parent);
  if (is_tagged(node)) {
    if (dim == Dimension::None) throw ParseError(path, "'" + key + "' takes no unit");
    double f = 0.0;
    try {
      f = unit_factor(node["unit"].get<std::string>(), dim);
    } catch (const InvalidParameter& e) {
      throw ParseError(path, e.what());
    }
    const json& v = node["value"];
    if (v.is_number()) return v.get<double>() * f;
    if (v.is_array()) {
      json out = json::array();
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].is_number()) throw ParseError(child_path(path, "value/" + std::to_string(i)), "expected a number");
        out.push_back(v[i].get<double>() * f);
      }
      return out;
    }
    throw ParseError(child_path(path, "value"), "expected a number or a list of numbers");
  }
  if (node.is_object()) {
    json out = json::object();
    for (const auto& [k, v] : node.items()) out[k] = convert_si(v, k, key, child_path(path, k));
    return out;
  }
  if (node.is_array()) {
    if (dim != Dimension::None && all_numbers(node))
      throw ParseError(path, "'" + key + "' is a " + dimension_name(dim) + " and needs {\"value\", \"unit\"}");
    json out = json::array();
    for (std::size_t i = 0; i < node.size(); ++i)
      out.push_back(convert_si(node[i], key, parent, child_path(path, std::to_string(i))));
    return out;
  }
  if (node.is_number() && dim != Dimension::None)
    throw ParseError(path, "'" + key + "' is a " + dimension_name(dim) + " and needs {\"value\", \"unit\"}");
  return node;
}


json convert_tagged(const json& node, const std::string& key, const std::string& parent) {
  const Dimension dim = key_dimension(key, parent);
  if (dim != Dimension::None && (node.is_number() || all_numbers(node)))
    return json{{"value", node}, {"unit", si_unit(dim)}};
  if (node.is_object()) {
    json out = json::object();
    for (const auto& [k, v] : node.items()) out[k] = convert_tagged(v, k, key);
    return out;
  }
  if (node.is_array()) {
    json out = json::array();
    for (const auto& v : node) out.push_back(convert_tagged(v, key, parent));
    return out;
  }
  return node;
}

// Reads one JSON object, tracking which keys were used so leftovers can be reported.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ParseError(path_, "expected an object");
  }

  bool has(const std::string& key) {
    used_.insert(key);
    return j_.contains(key);
  }
  const json& raw(const std::string& key) {
    if (!has(key)) throw ParseError(at(key), "missing");
    return j_[key];
  }
  std::string at(const std::string& key) const { return child_path(path_, key); }

  double number(const std::string& key, double fallback) { return has(key) ? number(key) : fallback; }
  double number(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_number()) throw ParseError(at(key), "expected a number");
    return v.get<double>();
  }
  std::optional<double> optional_number(const std::string& key) {
    if (!has(key)) return std::nullopt;
    return number(key);
  }
  long long integer(const std::string& key, long long fallback, long long min_value) {
    if (!has(key)) return fallback;
    const json& v = j_[key];
    if (!v.is_number_integer()) throw ParseError(at(key), "expected an integer");
    const long long n = v.get<long long>();
    if (n < min_value) throw ParseError(at(key), "must be at least " + std::to_string(min_value));
    return n;
  }
  std::string string(const std::string& key, const std::string& fallback) {
    if (!has(key)) return fallback;
    if (!j_[key].is_string()) throw ParseError(at(key), "expected a string");
    return j_[key].get<std::string>();
  }
  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    if (!j_[key].is_boolean()) throw ParseError(at(key), "expected true or false");
    return j_[key].get<bool>();
  }
  std::vector<double> numbers(const std::string& key, std::size_t min_size = 1) {
    const json& v = raw(key);
    std::vector<double> out;
    if (v.is_number()) {
      out.push_back(v.get<double>());
    } else if (v.is_array()) {
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].is_number()) throw ParseError(at(key) + "/" + std::to_string(i), "expected a number");
        out.push_back(v[i].get<double>());
      }
    } else {
      throw ParseError(at(key), "expected a number or a list");
    }
    if (out.size() < min_size) throw ParseError(at(key), "needs at least " + std::to_string(min_size) + " values");
    return out;
  }
  Vec3 vec3(const std::string& key) {
    const auto v = numbers(key);
    if (v.size() != 3) throw ParseError(at(key), "expected 3 components");
    return {v[0], v[1], v[2]};
  }
  Vec3 vec3(const std::string& key, const Vec3& fallback) { return has(key) ? vec3(key) : fallback; }
  std::pair<double, double> range(const std::string& key) {
    const auto v = numbers(key);
    if (v.size() != 2 || !(v[0] < v[1])) throw ParseError(at(key), "expected [lo, hi] with lo < hi");
    return {v[0], v[1]};
  }
  void positive(const std::string& key, double v) const {
    if (!(v > 0.0)) throw ParseError(at(key), "must be positive");
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!used_.count(k)) throw ParseError(at(k), "unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

std::vector<Instant> parse_instants(const json& j, const std::string& path) {
  std::vector<Instant> out;
  if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i) {
      const auto part = parse_instants(j[i], path + "/" + std::to_string(i));
      out.insert(out.end(), part.begin(), part.end());
    }
    return out;
  }
  Section s(j, path);
  int kinds = 0;
  for (const auto& [key, var] : {std::pair{"phase", ScheduleVariable::Phase}, std::pair{"time", ScheduleVariable::Time},
                                 std::pair{"fraction", ScheduleVariable::Fraction}}) {
    if (!s.has(key)) continue;
    ++kinds;
    for (double v : s.numbers(key)) out.push_back({var, v});
  }
  if (kinds != 1) throw ParseError(path, "give exactly one of phase, time or fraction");
  s.finish();
  return out;
}

PhaseLaw parse_law(const json& j, const std::string& path) {
  Section s(j, path);
  const std::string kind = s.string("kind", "linear");
  PhaseLaw law;
  try {
    if (kind == "linear") {
      law = PhaseLaw::linear(s.number("omega", 2.0 * units::pi / 0.150),
                             s.number("duration", std::numeric_limits<double>::infinity()));
    } else if (kind == "blackman") {
      law = PhaseLaw::blackman(s.number("duration"), s.number("distance"));
    } else if (kind == "concatenated_blackman") {
      law = PhaseLaw::concatenated_blackman(s.number("half_duration"), s.number("distance"));
    } else if (kind == "piecewise") {
      law = PhaseLaw::piecewise(s.number("v_max"), s.number("distance"), s.number("ramp_distance", 0.8e-3));
    } else {
      throw ParseError(s.at("kind"), "unknown phase law '" + kind + "'");
    }
  } catch (const InvalidParameter& e) {
    throw ParseError(path, e.what());
  }
  law.period = s.number("period", law.period);
  law.phi0 = s.number("phi0", law.phi0);
  s.positive("period", law.period);
  s.finish();
  return law;
}

ControlVector parse_control(const json& j, const std::string& path) {
  try {
    ControlVector c = control_from_json(j);
    c.validate();
    return c;
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception& e) {
    throw ParseError(path, e.what());
  }
}

CloudConfig parse_cloud(const json& j, const std::string& path) {
  Section s(j, path);
  CloudConfig c;
  c.position = s.vec3("position");
  c.temperature = s.number("temperature", c.temperature);
  s.positive("temperature", c.temperature);
  c.atoms = static_cast<std::size_t>(s.integer("atoms", static_cast<long long>(c.atoms), 0));
  c.x_lo = s.optional_number("x_lo");
  c.x_hi = s.optional_number("x_hi");
  if (c.x_lo && c.x_hi && !(*c.x_lo < *c.x_hi)) throw ParseError(path, "x_lo must be below x_hi");
  s.finish();
  return c;
}

ProgramSegment parse_segment(const json& j, const std::string& path, const std::optional<PhaseLaw>& default_law) {
  Section s(j, path);
  ProgramSegment seg;
  const std::string kind = s.string("kind", "law");
  if (kind == "law") {
    seg.kind = ProgramSegment::Kind::Law;
    if (s.has("law"))
      seg.law = parse_law(s.raw("law"), s.at("law"));
    else if (default_law)
      seg.law = *default_law;
    else
      throw ParseError(path, "law segment needs 'law' or a scenario phase_law");
    if (!std::isfinite(seg.law.end_time())) throw ParseError(path, "law segment needs a finite duration");
  } else if (kind == "sweep") {
    seg.kind = ProgramSegment::Kind::Sweep;
    seg.from = s.number("from");
    seg.to = s.number("to");
    seg.duration = s.number("duration");
  } else if (kind == "ramp") {
    seg.kind = ProgramSegment::Kind::Ramp;
    seg.from = s.number("s_from", 0.0);
    seg.to = s.number("s_to", 1.0);
    seg.duration = s.number("duration");
  } else if (kind == "hold") {
    seg.kind = ProgramSegment::Kind::Hold;
    const auto at = parse_instants(s.raw("at"), s.at("at"));
    if (at.size() != 1) throw ParseError(s.at("at"), "hold needs one instant");
    seg.from = seg.to = at[0].value;
    seg.duration = s.number("duration");
  } else {
    throw ParseError(s.at("kind"), "unknown segment kind '" + kind + "'");
  }
  if (seg.kind != ProgramSegment::Kind::Law) s.positive("duration", seg.duration);
  s.finish();
  return seg;
}

// Keys shared by every ensemble-driven section.
void read_ensemble(Section& s, EnsembleConfig& e, const std::optional<PhaseLaw>& law, bool need_clouds) {
  if (s.has("clouds")) {
    const json& cl = s.raw("clouds");
    if (!cl.is_array()) throw ParseError(s.at("clouds"), "expected a list");
    for (std::size_t i = 0; i < cl.size(); ++i) e.clouds.push_back(parse_cloud(cl[i], s.at("clouds") + "/" + std::to_string(i)));
  }
  if (need_clouds && e.clouds.empty()) throw ParseError(s.at("clouds"), "at least one cloud is required");
  if (s.has("program")) {
    const json& pr = s.raw("program");
    if (!pr.is_array()) throw ParseError(s.at("program"), "expected a list");
    for (std::size_t i = 0; i < pr.size(); ++i)
      e.program.push_back(parse_segment(pr[i], s.at("program") + "/" + std::to_string(i), law));
  }
  if (need_clouds && e.program.empty()) throw ParseError(s.at("program"), "at least one program segment is required");
  e.snapshot_interval = s.number("snapshot_interval", 0.0);
  e.nu_max = s.optional_number("nu_max");
  if (e.nu_max) s.positive("nu_max", *e.nu_max);
  e.dt = s.number("dt", 0.0);
  e.steps_per_period = s.number("steps_per_period", e.steps_per_period);
  if (e.steps_per_period < kMinStepsPerPeriod)
    throw ParseError(s.at("steps_per_period"), "must be at least " + std::to_string(int(kMinStepsPerPeriod)));
  e.gradient_x = s.number("gradient_x", 0.0);
  e.box.lo = s.vec3("box_lo", e.box.lo);
  e.box.hi = s.vec3("box_hi", e.box.hi);
}

LayoutSource parse_layout(const json& j, const std::string& path) {
  LayoutSource l;
  if (j.is_string()) {
    if (j.get<std::string>() != "canonical") throw ParseError(path, "layout must be \"canonical\" or an object");
    return l;
  }
  Section s(j, path);
  if (s.has("file")) {
    l.kind = "file";
    l.file = s.string("file", "");
  } else {
    l.kind = s.string("kind", "canonical");
    if (l.kind != "canonical") throw ParseError(s.at("kind"), "layout kind must be canonical or a file reference");
  }
  l.strip_width = s.optional_number("strip_width");
  if (l.strip_width) s.positive("strip_width", *l.strip_width);
  l.strands = static_cast<int>(s.integer("strands", 7, 1));
  s.finish();
  return l;
}

ScheduleSource parse_schedule_source(const json& j, const std::string& path) {
  if (!j.is_object()) throw ParseError(path, "expected an object");
  ScheduleSource src;
  if (!j.contains("form") || !j["form"].is_string()) throw ParseError(path + "/form", "missing");
  src.form = j["form"].get<std::string>();
  json rest = j;
  rest.erase("form");
  if (src.form == "table") {
    Section s(j, path);
    s.has("form");
    src.file = s.string("file", "");
    if (src.file.empty()) throw ParseError(s.at("file"), "missing");
    s.finish();
  } else if (src.form == "merge_balanced") {
    Section s(j, path);
    s.has("form");
    src.temperature = s.number("temperature", 2e-6);
    s.positive("temperature", *src.temperature);
    for (const char* k : {"central_channel", "central_current", "amplitude", "bias"})
      if (s.has(k)) src.params[k] = j[k];
    s.finish();
  } else if (src.form == "height_optimized") {
    Section s(j, path);
    s.has("form");
    src.knots = static_cast<int>(s.integer("knots", 32, 2));
    src.knob = s.string("knob", "I0");
    if (src.knob != "I0" && src.knob != "By") throw ParseError(s.at("knob"), "knob must be I0 or By");
    const ScheduleSource base = parse_schedule_source(s.raw("base"), s.at("base"));
    if (base.form == "height_optimized") throw ParseError(s.at("base"), "base cannot itself be height_optimized");
    src.params = j["base"];
    s.finish();
  } else {
    src.params = rest;
    try {
      Schedule::analytic(src.form, src.params);
    } catch (const std::exception& e) {
      throw ParseError(path, e.what());
    }
  }
  return src;
}

SpeciesParams parse_species(const json& j, const std::string& path) {
  if (j.is_string()) {
    if (j.get<std::string>() != "rb87") throw ParseError(path, "unknown species '" + j.get<std::string>() + "'");
    return SpeciesParams::rb87();
  }
  Section s(j, path);
  SpeciesParams sp = SpeciesParams::rb87();
  sp.mass = s.number("mass", sp.mass);
  s.positive("mass", sp.mass);
  sp.mf_gf = s.number("mf_gf", sp.mf_gf);
  sp.gravity = s.vec3("gravity", sp.gravity);
  s.finish();
  return sp;
}

void check_variable(const Scenario& sc, const std::vector<Instant>& at, const std::string& path) {
  if (sc.schedule.form == "table") return;  // resolved when the file is read
  ScheduleVariable v = ScheduleVariable::Phase;
  if (sc.schedule.form == "split_bec") v = ScheduleVariable::Fraction;
  if (sc.schedule.form == "constant") return;
  for (const auto& i : at)
    if (i.variable != v) throw ParseError(path, "instant is a " + to_string(i.variable) + " but the schedule is parameterized by " + to_string(v));
}

}  // namespace

double unit_factor(const std::string& unit, Dimension dim) {
  const auto& t = unit_table();
  const auto it = t.find(unit);
  if (it == t.end()) throw InvalidParameter("unknown unit '" + unit + "'");
  if (it->second.dim != dim)
    throw InvalidParameter("unit '" + unit + "' is a " + dimension_name(it->second.dim) + ", expected a " + dimension_name(dim));
  return it->second.factor;
}

std::string si_unit(Dimension dim) {
  switch (dim) {
    case Dimension::Length: return "m";
    case Dimension::Current: return "A";
    case Dimension::Field: return "T";
    case Dimension::Gradient: return "T/m";
    case Dimension::Time: return "s";
    case Dimension::Temperature: return "K";
    case Dimension::Velocity: return "m/s";
    case Dimension::Frequency: return "Hz";
    case Dimension::Angle: return "rad";
    case Dimension::AngularRate: return "rad/s";
    case Dimension::Mass: return "kg";
    case Dimension::Acceleration: return "m/s2";
    case Dimension::None: break;
  }
  return "";
}

Dimension key_dimension(const std::string& key, const std::string& parent) {
  if (parent == "currents") return Dimension::Current;
  const auto& t = key_table();
  const auto it = t.find(key);
  return it == t.end() ? Dimension::None : it->second;
}

json to_si(const json& tagged) { return convert_si(tagged, "", "", ""); }
json to_tagged(const json& si) { return convert_tagged(si, "", ""); }

void FrameConfig::validate() const {
  if (projection != 'x' && projection != 'y' && projection != 'z')
    throw InvalidParameter("projection axis must be x, y or z");
  if (nx < 1 || nz < 1) throw InvalidParameter("frame grid must be positive");
  if (!(pixel > 0.0)) throw InvalidParameter("pixel size must be positive");
  if (!(blur >= 0.0)) throw InvalidParameter("blur sigma must be non-negative");
  if (!(tof >= 0.0)) throw InvalidParameter("time of flight must be non-negative");
}

json Scenario::to_json() const { return to_tagged(si); }

Scenario parse_scenario(const json& doc, const std::filesystem::path& base_dir) {
  Scenario sc;
  sc.base_dir = base_dir;
  sc.si = to_si(doc);
  Section top(sc.si, "");
  sc.name = top.string("name", sc.name);
  if (!top.has("seed")) throw ParseError("/seed", "a seed is mandatory");
  const json& seed = sc.si["seed"];
  if (!seed.is_number_integer() || (!seed.is_number_unsigned() && seed.get<long long>() < 0))
    throw ParseError("/seed", "expected a non-negative integer");
  sc.seed = sc.si["seed"].get<std::uint64_t>();
  if (top.has("species")) sc.species = parse_species(top.raw("species"), "/species");
  if (top.has("layout")) sc.layout = parse_layout(top.raw("layout"), "/layout");
  if (top.has("schedule")) sc.schedule = parse_schedule_source(top.raw("schedule"), "/schedule");
  if (top.has("phase_law")) sc.phase_law = parse_law(top.raw("phase_law"), "/phase_law");

  if (top.has("analyze")) {
    Section s(top.raw("analyze"), "/analyze");
    AnalyzeConfig a;
    a.at = parse_instants(s.raw("at"), "/analyze/at");
    check_variable(sc, a.at, "/analyze/at");
    if (s.has("x_range")) std::tie(a.x_lo, a.x_hi) = s.range("x_range");
    a.x_step = s.number("x_step", a.x_step);
    s.positive("x_step", a.x_step);
    if (s.has("z_seeds")) a.z_seeds = s.numbers("z_seeds");
    a.depth = s.boolean("depth", false);
    s.finish();
    sc.analyze = a;
  }
  if (top.has("profile")) {
    Section s(top.raw("profile"), "/profile");
    ProfileConfig p;
    p.at = parse_instants(s.raw("at"), "/profile/at");
    check_variable(sc, p.at, "/profile/at");
    if (s.has("x_range")) std::tie(p.x_lo, p.x_hi) = s.range("x_range");
    p.samples = static_cast<int>(s.integer("samples", p.samples, 3));
    p.seed_z = s.number("seed_z", p.seed_z);
    p.schedule_samples = static_cast<int>(s.integer("schedule_samples", p.schedule_samples, 2));
    s.finish();
    sc.profile = p;
  }
  if (top.has("optimize")) {
    Section s(top.raw("optimize"), "/optimize");
    OptimizeConfig o;
    o.mode = s.string("mode", o.mode);
    if (o.mode != "height" && o.mode != "full" && o.mode != "merge_balance")
      throw ParseError("/optimize/mode", "mode must be height, full or merge_balance");
    o.knots = static_cast<int>(s.integer("knots", o.knots, 1));
    o.knob = s.string("knob", o.knob);
    if (o.knob != "I0" && o.knob != "By") throw ParseError("/optimize/knob", "knob must be I0 or By");
    o.z_ref = s.optional_number("z_ref");
    o.z_tol = s.number("z_tol", o.z_tol);
    o.trap_seed = s.vec3("trap_seed", o.trap_seed);
    o.z = s.number("z", o.z);
    o.x_tol = s.number("x_tol", o.x_tol);
    o.nu_x = s.number("nu_x", o.nu_x);
    o.nu_x_tol = s.number("nu_x_tol", o.nu_x_tol);
    o.nu_z = s.number("nu_z", o.nu_z);
    o.nu_z_tol = s.number("nu_z_tol", o.nu_z_tol);
    o.period = s.number("period", o.period);
    if (s.has("free_knobs")) {
      o.free_knobs.clear();
      const json& k = s.raw("free_knobs");
      if (!k.is_array() || k.empty()) throw ParseError("/optimize/free_knobs", "expected a list of knob names");
      for (const auto& v : k) o.free_knobs.push_back(v.get<std::string>());
    }
    o.temperature = s.number("temperature", o.temperature);
    for (const char* k : {"z_tol", "x_tol", "nu_x_tol", "nu_z_tol", "period", "temperature"})
      s.positive(k, s.number(k, 1.0));
    s.finish();
    if (o.mode != "merge_balance" && sc.schedule.form != "basic_conveyor" && sc.schedule.form != "merge_h2" &&
        sc.schedule.form != "table")
      throw ParseError("/optimize/mode", "height and full modes need a phase schedule");
    sc.optimize = o;
  }
  if (top.has("simulate")) {
    Section s(top.raw("simulate"), "/simulate");
    SimulateConfig m;
    m.experiment = s.string("experiment", m.experiment);
    static const std::set<std::string> kinds = {"ensemble", "transport", "split_merge", "double_well", "dispense"};
    if (!kinds.count(m.experiment)) throw ParseError("/simulate/experiment", "unknown experiment '" + m.experiment + "'");
    read_ensemble(s, m.ensemble, sc.phase_law, m.experiment == "ensemble");
    m.temperature = s.number("temperature", m.temperature);
    s.positive("temperature", m.temperature);
    m.atoms = static_cast<std::size_t>(s.integer("atoms", static_cast<long long>(m.atoms), 1));
    if (s.has("trap_seed")) m.trap_seed = s.vec3("trap_seed");
    m.cycles = static_cast<int>(s.integer("cycles", m.cycles, 1));
    m.half_cycle = s.number("half_cycle", m.half_cycle);
    s.positive("half_cycle", m.half_cycle);
    m.duration = s.number("duration", m.duration);
    s.positive("duration", m.duration);
    m.gradient_x = m.ensemble.gradient_x;
    m.omega = s.number("omega", m.omega);
    s.positive("omega", m.omega);
    s.finish();
    if (m.experiment == "transport" && !sc.phase_law) throw ParseError("/phase_law", "transport needs a phase law");
    if (m.experiment == "dispense" && sc.schedule.form != "dispenser")
      throw ParseError("/schedule/form", "dispense needs the dispenser schedule");
    sc.simulate = m;
  }
  if (top.has("scan")) {
    Section s(top.raw("scan"), "/scan");
    ScanConfig c;
    if (s.has("v_max")) c.v_max = s.numbers("v_max", 2);
    for (double v : c.v_max)
      if (!(v > 0.0)) throw ParseError("/scan/v_max", "velocities must be positive");
    c.distance = s.number("distance", c.distance);
    c.ramp_distance = s.number("ramp_distance", c.ramp_distance);
    c.temperature = s.number("temperature", c.temperature);
    c.atoms = static_cast<std::size_t>(s.integer("atoms", static_cast<long long>(c.atoms), 1));
    if (s.has("trap_seed")) c.trap_seed = s.vec3("trap_seed");
    for (const char* k : {"distance", "ramp_distance", "temperature"}) s.positive(k, s.number(k, 1.0));
    s.finish();
    sc.scan = c;
  }
  if (top.has("sensitivity")) {
    Section s(top.raw("sensitivity"), "/sensitivity");
    SensitivityConfig c;
    if (s.has("at")) {
      const auto at = parse_instants(s.raw("at"), "/sensitivity/at");
      if (at.size() != 1) throw ParseError("/sensitivity/at", "give one instant");
      check_variable(sc, at, "/sensitivity/at");
      c.at = at[0];
    }
    if (s.has("control")) c.control = parse_control(s.raw("control"), "/sensitivity/control");
    if (!c.at && !c.control) throw ParseError("/sensitivity", "give 'at' or 'control'");
    c.trap_seed = s.vec3("trap_seed", c.trap_seed);
    c.noise.current_rel = s.number("current_rel", c.noise.current_rel);
    c.noise.ambient_field = s.vec3("ambient_field", c.noise.ambient_field);
    c.noise.ambient_gradient = s.number("ambient_gradient", c.noise.ambient_gradient);
    if (c.noise.current_rel < 0 || c.noise.ambient_gradient < 0 || c.noise.ambient_field.x < 0 ||
        c.noise.ambient_field.y < 0 || c.noise.ambient_field.z < 0)
      throw ParseError("/sensitivity", "noise sigmas must be non-negative");
    c.samples = static_cast<std::size_t>(s.integer("samples", static_cast<long long>(c.samples), 100));
    s.finish();
    sc.sensitivity = c;
  }
  if (top.has("frames")) {
    Section s(top.raw("frames"), "/frames");
    FramesConfig f;
    read_ensemble(s, f.ensemble, sc.phase_law, false);
    f.times = s.numbers("times");
    for (std::size_t i = 1; i < f.times.size(); ++i)
      if (!(f.times[i] >= f.times[i - 1])) throw ParseError("/frames/times", "times must be non-decreasing");
    if (f.times.front() < 0) throw ParseError("/frames/times", "times must be non-negative");
    if (s.has("frame")) {
      Section fr(s.raw("frame"), "/frames/frame");
      const std::string axis = fr.string("projection", "y");
      if (axis.size() != 1) throw ParseError(fr.at("projection"), "projection must be x, y or z");
      f.frame.projection = axis[0];
      if (fr.has("grid")) {
        const auto g = fr.numbers("grid");
        if (g.size() != 2 || g[0] < 1 || g[1] < 1 || g[0] != std::floor(g[0]) || g[1] != std::floor(g[1]))
          throw ParseError(fr.at("grid"), "expected two positive integers [nx, nz]");
        f.frame.nx = static_cast<int>(g[0]);
        f.frame.nz = static_cast<int>(g[1]);
      }
      f.frame.pixel = fr.number("pixel", f.frame.pixel);
      if (fr.has("center")) {
        const auto c = fr.numbers("center");
        if (c.size() != 2) throw ParseError(fr.at("center"), "expected [horizontal, vertical]");
        f.frame.center_h = c[0];
        f.frame.center_v = c[1];
      }
      f.frame.blur = fr.number("blur", 0.0);
      f.frame.tof = fr.number("tof", 0.0);
      fr.finish();
      try {
        f.frame.validate();
      } catch (const InvalidParameter& e) {
        throw ParseError("/frames/frame", e.what());
      }
    }
    s.finish();
    sc.frames = f;
  }
  top.finish();
  return sc;
}

Scenario parse_scenario_text(const std::string& text, const std::filesystem::path& base_dir) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError("byte " + std::to_string(e.byte), "malformed JSON");
  }
  return parse_scenario(doc, base_dir);
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string(), "cannot open scenario file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenario_text(ss.str(), path.parent_path());
}

namespace {

std::filesystem::path resolve(const Scenario& sc, const std::filesystem::path& p) {
  return p.is_absolute() || sc.base_dir.empty() ? p : sc.base_dir / p;
}

Schedule build_from_source(const Scenario& sc, const ScheduleSource& src, const ChipLayout& layout, int threads) {
  if (src.form == "table") {
    std::ifstream in(resolve(sc, src.file));
    if (!in) throw ParseError("/schedule/file", "cannot open '" + src.file.string() + "'");
    json doc;
    try {
      in >> doc;
      return Schedule::from_json(doc);
    } catch (const std::exception& e) {
      throw ParseError("/schedule/file", e.what());
    }
  }
  if (src.form == "merge_balanced") {
    MergeBalanceOptions o;
    o.temperature = *src.temperature;
    const Schedule base = Schedule::analytic("basic_conveyor", src.params);
    const ControlVector c0 = base.at(0.0);
    o.conveyor.central_current = src.params.value("central_current", o.conveyor.central_current);
    o.conveyor.amplitude = src.params.value("amplitude", o.conveyor.amplitude);
    o.conveyor.central_channel = src.params.value("central_channel", o.conveyor.central_channel);
    o.conveyor.bias = c0.bias;
    return balance_merge_schedule(layout, sc.species, o).schedule;
  }
  if (src.form == "height_optimized") {
    const ScheduleSource base = parse_schedule_source(src.params, "/schedule/base");
    HeightOnlyOptions h;
    h.knots = src.knots;
    h.vary_bias_y = src.knob == "By";
    (void)threads;
    const HeightOnlyResult r = optimize_height(layout, sc.species, build_from_source(sc, base, layout, threads), h);
    if (!r.optimized.complete || !r.optimized.all_converged())
      throw NoConvergence("height optimization did not converge at every knot");
    return r.optimized.schedule();
  }
  return Schedule::analytic(src.form, src.params);
}

}  // namespace

ChipLayout build_layout(const Scenario& sc) {
  ChipLayout layout;
  if (sc.layout.kind == "file") {
    try {
      layout = layout_from_file(resolve(sc, sc.layout.file));
    } catch (const ParseError& e) {
      throw ParseError("/layout/file: " + e.location(), e.detail());
    } catch (const std::exception& e) {
      throw ParseError("/layout/file", e.what());
    }
  } else {
    layout = canonical_layout();
  }
  if (sc.layout.strip_width) layout = layout.as_flat_strips(*sc.layout.strip_width, sc.layout.strands);
  return layout;
}

Schedule build_schedule(const Scenario& sc, const ChipLayout& layout, int threads) {
  return build_from_source(sc, sc.schedule, layout, threads);
}

ControlProgram build_program(const Schedule& schedule, const EnsembleConfig& config) {
  std::optional<ControlProgram> program;
  for (const auto& seg : config.program) {
    ControlProgram piece;
    switch (seg.kind) {
      case ProgramSegment::Kind::Law:
        piece = ControlProgram::phase(schedule, seg.law);
        break;
      case ProgramSegment::Kind::Sweep:
        piece = ControlProgram::phase_sweep(schedule, seg.from, seg.to, seg.duration);
        break;
      case ProgramSegment::Kind::Ramp: {
        const double a = seg.from, b = seg.to, d = seg.duration;
        piece.at = [schedule, a, b, d](double t) { return schedule.at(a + (b - a) * t / d); };
        piece.channels = schedule.channels();
        piece.duration = d;
        break;
      }
      case ProgramSegment::Kind::Hold:
        piece = ControlProgram::constant(schedule.at(seg.from), seg.duration);
        piece.channels = schedule.channels();
        break;
    }
    program = program ? program->then(piece) : piece;
  }
  if (!program) throw InvalidParameter("empty control program");
  if (config.gradient_x != 0.0) program = program->with_gradient(axial_gradient(config.gradient_x));
  return *program;
}

}  // namespace chiptrap
