#pragma once

// Orientation arithmetic on the 36-view panorama grid: canonical angles,
// the 128-d trigonometric orientation embedding, relative deltas, and
// grid-neighbor lookup. Everything here is a pure function.

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>
#include <vector>

namespace nvem {

inline constexpr double kPi = 3.14159265358979323846;

// Panorama layout: 12 heading columns x 3 elevation rows, 30 degree spacing.
inline constexpr int kHeadingCols = 12;
inline constexpr int kElevationRows = 3;
inline constexpr int kNumViews = kHeadingCols * kElevationRows;
inline constexpr double kViewStep = kPi / 6.0;
inline constexpr int kOrientationDim = 128;

// Wraps an angle into [0, 2*pi).
inline double wrap_heading(double a) {
  double two_pi = 2.0 * kPi;
  a = std::fmod(a, two_pi);
  if (a < 0.0) a += two_pi;
  if (a >= two_pi) a = 0.0;  // fmod rounding can land exactly on 2*pi
  return a;
}

// Wraps an angle into (-pi, pi]; the boundary maps to +pi.
inline double wrap_signed(double a) {
  double two_pi = 2.0 * kPi;
  a = std::fmod(a, two_pi);
  if (a <= -kPi) a += two_pi;
  if (a > kPi) a -= two_pi;
  return a;
}

struct Orientation {
  double heading = 0.0;    // [0, 2*pi)
  double elevation = 0.0;  // [-pi/2, pi/2]

  static Orientation canonical(double heading, double elevation) {
    if (elevation < -kPi / 2.0 || elevation > kPi / 2.0)
      throw std::invalid_argument("elevation out of [-pi/2, pi/2]");
    return Orientation{wrap_heading(heading), elevation};
  }
};

// Signed orientation difference; heading component lives in (-pi, pi].
struct OrientationDelta {
  double heading = 0.0;
  double elevation = 0.0;
};

using OriEmbedding = Eigen::VectorXd;

// [cos h, sin h, cos e, sin e] repeated 32 times.
inline OriEmbedding embed_angles(double heading, double elevation) {
  OriEmbedding v(kOrientationDim);
  double block[4] = {std::cos(heading), std::sin(heading), std::cos(elevation),
                     std::sin(elevation)};
  for (int i = 0; i < kOrientationDim; ++i) v[i] = block[i % 4];
  return v;
}

inline OriEmbedding embed_orientation(const Orientation& o) {
  return embed_angles(o.heading, o.elevation);
}

inline OriEmbedding embed_delta(const OrientationDelta& d) {
  return embed_angles(d.heading, d.elevation);
}

inline OrientationDelta relative_orientation(const Orientation& obj,
                                             const Orientation& anchor) {
  return OrientationDelta{wrap_signed(obj.heading - anchor.heading),
                          obj.elevation - anchor.elevation};
}

// slot = row * 12 + col; rows 0,1,2 are elevations -30, 0, +30 degrees.
inline int view_col(int slot) { return slot % kHeadingCols; }
inline int view_row(int slot) { return slot / kHeadingCols; }
inline int view_slot(int col, int row) { return row * kHeadingCols + col; }

inline Orientation slot_orientation(int slot) {
  if (slot < 0 || slot >= kNumViews)
    throw std::out_of_range("view slot out of [0, 36)");
  return Orientation{wrap_heading(view_col(slot) * kViewStep),
                     (view_row(slot) - 1) * kViewStep};
}

// Column whose 30-degree sector [c*30-15, c*30+15) contains the heading.
inline int heading_col(double heading) {
  int col = static_cast<int>(std::floor(wrap_heading(heading) / kViewStep + 0.5));
  return col % kHeadingCols;
}

// Middle-row slot owning the given orientation (candidates live at elevation 0).
inline int owning_slot(const Orientation& o) {
  int row = 1;
  if (o.elevation < -kViewStep / 2.0) row = 0;
  if (o.elevation >= kViewStep / 2.0) row = 2;
  return view_slot(heading_col(o.heading), row);
}

// Grid neighbors of a panorama slot. count=4 gives {left, right, down, up};
// count=8 appends the four diagonals. Headings wrap across column 0/11; a
// missing elevation neighbor (top or bottom row) is substituted by the slot
// itself so the result always has exactly `count` entries.
inline std::vector<int> neighbor_views(int view_index, int count) {
  if (count != 4 && count != 8)
    throw std::invalid_argument("neighbor count must be 4 or 8");
  if (view_index < 0 || view_index >= kNumViews)
    throw std::out_of_range("view index out of [0, 36)");
  int col = view_col(view_index);
  int row = view_row(view_index);
  auto at = [&](int dc, int dr) {
    int c = (col + dc + kHeadingCols) % kHeadingCols;
    int r = row + dr;
    if (r < 0 || r >= kElevationRows) return view_index;
    return view_slot(c, r);
  };
  std::vector<int> out = {at(-1, 0), at(+1, 0), at(0, -1), at(0, +1)};
  if (count == 8) {
    out.push_back(at(-1, -1));
    out.push_back(at(+1, -1));
    out.push_back(at(-1, +1));
    out.push_back(at(+1, +1));
  }
  return out;
}

}  // namespace nvem
