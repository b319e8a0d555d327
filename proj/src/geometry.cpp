#include "chiptrap/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "chiptrap/errors.hpp"

namespace chiptrap {

namespace {

using nlohmann::json;

void add_polyline(std::vector<WireSegment>& out, const std::vector<Vec3>& pts,
                  const ChannelId& channel) {
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    if (pts[i] == pts[i + 1]) continue;
    out.push_back({pts[i], pts[i + 1], channel});
  }
}

double unit_scale(const std::string& units, const std::string& where) {
  if (units == "m") return 1.0;
  if (units == "um") return 1e-6;
  if (units == "mm") return 1e-3;
  throw ParseError(where, "unknown length unit '" + units + "' (expected m, mm or um)");
}

Vec3 parse_point(const json& j, const std::string& where, double scale) {
  if (!j.is_array() || j.size() != 3) throw ParseError(where, "expected [x, y, z]");
  Vec3 p;
  for (int i = 0; i < 3; ++i) {
    if (!j[i].is_number()) throw ParseError(where, "coordinate " + std::to_string(i) + " is not a number");
    p[i] = j[i].get<double>() * scale;
  }
  return p;
}

}  // namespace

ChipLayout::ChipLayout(std::vector<ChannelId> channels, std::vector<WireSegment> segments)
    : channels_(std::move(channels)), segments_(std::move(segments)) {
  std::set<ChannelId> seen;
  for (const auto& c : channels_) {
    if (c.empty()) throw InvalidParameter("empty channel name");
    if (!seen.insert(c).second) throw InvalidParameter("duplicate channel '" + c + "'");
  }
  const double inf = std::numeric_limits<double>::infinity();
  extent_ = {{inf, inf, inf}, {-inf, -inf, -inf}};
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    const auto& s = segments_[i];
    if (!seen.count(s.channel))
      throw InvalidParameter("segment " + std::to_string(i) + " references undeclared channel '" +
                             s.channel + "'");
    if (!is_finite(s.start) || !is_finite(s.end))
      throw InvalidParameter("segment " + std::to_string(i) + " has non-finite endpoints");
    if (norm(s.end - s.start) <= 0.0)
      throw InvalidParameter("segment " + std::to_string(i) + " has zero length");
    if (!std::isfinite(s.weight)) throw InvalidParameter("segment weight must be finite");
    for (const Vec3& p : {s.start, s.end}) {
      for (int k = 0; k < 3; ++k) {
        extent_.lo[k] = std::min(extent_.lo[k], p[k]);
        extent_.hi[k] = std::max(extent_.hi[k], p[k]);
      }
    }
  }
  if (segments_.empty()) extent_ = {};
}

bool ChipLayout::has_channel(const ChannelId& id) const {
  return std::find(channels_.begin(), channels_.end(), id) != channels_.end();
}

std::vector<std::string> ChipLayout::connectivity_warnings() const {
  std::vector<std::string> warnings;
  constexpr double tol = 1e-9;
  for (const auto& ch : channels_) {
    const WireSegment* prev = nullptr;
    int breaks = 0;
    for (const auto& s : segments_) {
      if (s.channel != ch || s.weight != 1.0) continue;
      if (prev && norm(prev->end - s.start) > tol) ++breaks;
      prev = &s;
    }
    if (breaks > 0)
      warnings.push_back("channel " + ch + " has " + std::to_string(breaks) +
                         " break(s) between consecutive segments");
  }
  return warnings;
}

ChipLayout ChipLayout::as_flat_strips(double width, int strands) const {
  if (!(width > 0.0) || strands < 1) throw InvalidParameter("strip width and strand count must be positive");
  std::vector<WireSegment> out;
  out.reserve(segments_.size() * static_cast<std::size_t>(strands));
  for (const auto& s : segments_) {
    const Vec3 dir = (s.end - s.start) / norm(s.end - s.start);
    // in-plane normal; the chip plane is z = 0
    Vec3 side = cross(Vec3{0, 0, 1}, dir);
    const double len = norm(side);
    if (len < 1e-12) {
      out.push_back(s);
      continue;
    }
    side = side / len;
    for (int k = 0; k < strands; ++k) {
      const double off = strands == 1 ? 0.0 : width * (static_cast<double>(k) / (strands - 1) - 0.5);
      WireSegment f = s;
      f.start += side * off;
      f.end += side * off;
      f.weight = s.weight / strands;
      out.push_back(f);
    }
  }
  return ChipLayout(channels_, std::move(out));
}

ChipLayout ChipLayout::translated(const Vec3& offset) const {
  auto segs = segments_;
  for (auto& s : segs) {
    s.start += offset;
    s.end += offset;
  }
  return ChipLayout(channels_, std::move(segs));
}

ChipLayout canonical_layout(const CanonicalLayoutParams& p) {
  if (!(p.period > 0.0)) throw InvalidParameter("period must be positive");
  if (!(p.length > 0.0)) throw InvalidParameter("conveyor length must be positive");
  if (!(p.meander_arm > 0.0) || !(p.meander_gap > 0.0) || !(p.lead_length > 0.0) ||
      !(p.h_half_length > 0.0) || p.central_overhang < 0.0)
    throw InvalidParameter("layout dimensions must be positive");

  std::vector<WireSegment> segs;
  const double lead = p.lead_length;

  // Meanders: square waves whose near runs sit at |y| = gap and far runs at gap + arm.
  // Both progress in +x, so positive current in a near run flows parallel to I0.
  const int half_periods = static_cast<int>(std::ceil(p.length / (0.5 * p.period))) + 1;
  for (const auto& [channel, side, offset] :
       {std::tuple{ChannelId{"IM1"}, 1.0, 0.0}, std::tuple{ChannelId{"IM2"}, -1.0, 0.25 * p.period}}) {
    const double near_y = side * p.meander_gap;
    const double far_y = side * (p.meander_gap + p.meander_arm);
    std::vector<Vec3> pts;
    for (int k = 0; k <= half_periods; ++k) {
      const double x = offset + 0.5 * p.period * k - 0.5 * p.period;
      const bool inward = (k % 2) == 0;
      if (inward) {
        pts.push_back({x, far_y, 0});
        pts.push_back({x, near_y, 0});
      } else {
        pts.push_back({x, near_y, 0});
        pts.push_back({x, far_y, 0});
      }
    }
    add_polyline(segs, pts, channel);
  }

  const double c0 = -p.central_overhang;
  const double c1 = p.length + p.central_overhang;
  add_polyline(segs, {{c0, -lead, 0}, {c0, 0, 0}, {c1, 0, 0}, {c1, lead, 0}}, "I0");

  const double xl = p.reservoir_left_x;
  add_polyline(segs, {{xl, -lead, 0}, {xl, 0, 0}, {p.i1_right_x, 0, 0}, {p.i1_right_x, lead, 0}}, "I1");
  add_polyline(segs, {{xl, -lead, 0}, {xl, 0, 0}, {p.i2_right_x, 0, 0}, {p.i2_right_x, lead, 0}}, "I2");
  add_polyline(segs,
               {{p.u_left_x, -lead, 0}, {p.u_left_x, p.u_base_y, 0}, {p.u_right_x, p.u_base_y, 0},
                {p.u_right_x, -lead, 0}},
               "IQ");

  // H1 along +y (positive current raises B_x above it), H2 along -y (lowers it).
  add_polyline(segs, {{p.h1_x, -p.h_half_length, 0}, {p.h1_x, p.h_half_length, 0}}, "IH1");
  add_polyline(segs, {{p.h2_x, p.h_half_length, 0}, {p.h2_x, -p.h_half_length, 0}}, "IH2");

  return ChipLayout({"I0", "I1", "I2", "IQ", "IM1", "IM2", "IH1", "IH2"}, std::move(segs));
}

ChipLayout layout_from_json_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError("byte " + std::to_string(e.byte), e.what());
  }
  if (!doc.is_object()) throw ParseError("$", "layout document must be an object");
  const std::string units = doc.value("units", std::string("m"));
  const double scale = unit_scale(units, "$.units");
  if (!doc.contains("channels") || !doc["channels"].is_array())
    throw ParseError("$.channels", "missing channel list");
  std::vector<ChannelId> channels;
  for (std::size_t i = 0; i < doc["channels"].size(); ++i) {
    const auto& c = doc["channels"][i];
    if (!c.is_string()) throw ParseError("$.channels[" + std::to_string(i) + "]", "expected a string");
    channels.push_back(c.get<std::string>());
  }
  std::set<ChannelId> declared(channels.begin(), channels.end());
  std::vector<WireSegment> segs;
  if (doc.contains("segments")) {
    const auto& arr = doc["segments"];
    if (!arr.is_array()) throw ParseError("$.segments", "expected an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string where = "$.segments[" + std::to_string(i) + "]";
      const auto& s = arr[i];
      if (!s.is_object()) throw ParseError(where, "expected an object");
      if (!s.contains("channel") || !s["channel"].is_string())
        throw ParseError(where + ".channel", "missing channel");
      WireSegment seg;
      seg.channel = s["channel"].get<std::string>();
      if (!declared.count(seg.channel))
        throw ParseError(where + ".channel", "unknown channel '" + seg.channel + "'");
      if (!s.contains("start")) throw ParseError(where + ".start", "missing");
      if (!s.contains("end")) throw ParseError(where + ".end", "missing");
      seg.start = parse_point(s["start"], where + ".start", scale);
      seg.end = parse_point(s["end"], where + ".end", scale);
      if (s.contains("weight")) {
        if (!s["weight"].is_number()) throw ParseError(where + ".weight", "expected a number");
        seg.weight = s["weight"].get<double>();
      }
      segs.push_back(std::move(seg));
    }
  }
  try {
    return ChipLayout(std::move(channels), std::move(segs));
  } catch (const InvalidParameter& e) {
    throw ParseError("$", e.what());
  }
}

std::string layout_to_json_text(const ChipLayout& layout, const std::string& units) {
  const double scale = unit_scale(units, "units");
  json doc;
  doc["units"] = units;
  doc["channels"] = layout.channels();
  doc["segments"] = json::array();
  for (const auto& s : layout.segments()) {
    json j;
    j["channel"] = s.channel;
    j["start"] = {s.start.x / scale, s.start.y / scale, s.start.z / scale};
    j["end"] = {s.end.x / scale, s.end.y / scale, s.end.z / scale};
    if (s.weight != 1.0) j["weight"] = s.weight;
    doc["segments"].push_back(std::move(j));
  }
  return doc.dump(2) + "\n";
}

ChipLayout layout_from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string(), "cannot open layout file");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return layout_from_json_text(ss.str());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ":" + e.location(), e.detail());
  }
}

void layout_to_file(const ChipLayout& layout, const std::filesystem::path& path,
                    const std::string& units) {
  std::ofstream out(path);
  if (!out) throw InvalidParameter("cannot write layout file " + path.string());
  out << layout_to_json_text(layout, units);
}

}  // namespace chiptrap
