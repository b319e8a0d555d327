#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "chiptrap/vec3.hpp"

namespace chiptrap {

/// Symbolic current-channel name: I0, I1, I2, IQ, IM1, IM2, IH1, IH2 or user-defined.
using ChannelId = std::string;

/// Straight zero-width filament carrying the current of `channel` from `start` to `end`.
struct WireSegment {
  Vec3 start;
  Vec3 end;
  ChannelId channel;
  /// Fraction of the channel current carried by this filament (flat-strip model).
  double weight = 1.0;

  friend bool operator==(const WireSegment&, const WireSegment&) = default;
};

struct BoundingBox {
  Vec3 lo;
  Vec3 hi;
};

/// Wire layout on the chip plane z = 0; atoms live in z > 0.
/// Immutable after construction.
class ChipLayout {
 public:
  ChipLayout() = default;
  /// Throws InvalidParameter on duplicate channels, degenerate or non-finite segments,
  /// and segments referencing undeclared channels.
  ChipLayout(std::vector<ChannelId> channels, std::vector<WireSegment> segments);

  const std::vector<ChannelId>& channels() const { return channels_; }
  const std::vector<WireSegment>& segments() const { return segments_; }
  bool has_channel(const ChannelId& id) const;
  BoundingBox extent() const { return extent_; }

  /// Channels whose segments do not chain into connected polylines.
  std::vector<std::string> connectivity_warnings() const;

  /// Returns a layout in which every segment is replaced by `strands` parallel filaments
  /// spread over `width` in the chip plane, each carrying 1/strands of the current.
  ChipLayout as_flat_strips(double width, int strands = 7) const;

  /// Rigid translation of every segment.
  ChipLayout translated(const Vec3& offset) const;

  bool operator==(const ChipLayout& o) const {
    return channels_ == o.channels_ && segments_ == o.segments_;
  }

 private:
  std::vector<ChannelId> channels_;
  std::vector<WireSegment> segments_;
  BoundingBox extent_{};
};

/// Dimensions of the reconstructed chip. Conveyor occupies x in [0, length].
/// Meander IM1 lies on the +y side of the central wire, IM2 on the -y side, a quarter
/// period further along x. The left section (x < 0) hosts I1, I2, IQ; H1 and H2 are
/// straight y-wires at the conveyor ends. I0, I1 and I2 are Z-shaped (leads leave to
/// -y on the left, +y on the right).
struct CanonicalLayoutParams {
  double period = 800e-6;
  double length = 4.6e-3;
  double meander_arm = 1.0e-3;
  double meander_gap = 70e-6;   // |y| of the meander runs closest to the central wire
  double lead_length = 4.0e-3;
  double central_overhang = 1.0e-3;  // I0 extends this far beyond both conveyor ends
  double h1_x = -0.4e-3;
  double h2_x = 5.0e-3;
  double h_half_length = 2.0e-3;
  double reservoir_left_x = -3.0e-3;   // shared left lead of I1 and I2
  double i2_right_x = -1.2e-3;
  double i1_right_x = 5.6e-3;
  double u_left_x = -3.6e-3;  // IQ legs, leading off to -y
  double u_right_x = -2.4e-3;
  double u_base_y = 0.0;
};

/// Throws InvalidParameter for non-positive dimensions.
ChipLayout canonical_layout(const CanonicalLayoutParams& params = {});

/// JSON layout document: {"units": "m"|"um", "channels": [...], "segments": [...]}.
ChipLayout layout_from_json_text(const std::string& text);
std::string layout_to_json_text(const ChipLayout& layout, const std::string& units = "m");
ChipLayout layout_from_file(const std::filesystem::path& path);
void layout_to_file(const ChipLayout& layout, const std::filesystem::path& path,
                    const std::string& units = "m");

}  // namespace chiptrap
