#pragma once

#include <opencv2/core.hpp>
#include <string>
#include <vector>

namespace istr {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

// Ordered vertex list, >= 3 vertices for a non-degenerate region.
struct Polygon {
  std::vector<Vec2> vertices;

  Polygon() = default;
  explicit Polygon(std::vector<Vec2> v) : vertices(std::move(v)) {}
  static Polygon rect(double x0, double y0, double x1, double y1);

  cv::Rect2d bbox() const;
  bool valid() const { return vertices.size() >= 3; }

  // Sutherland-Hodgman clip against [0,w]x[0,h].
  Polygon clipped(cv::Size canvas) const;
};

struct RasterResult {
  cv::Mat1b mask;        // 255 where pixel center is inside (even-odd rule)
  bool degenerate = false;  // zero area after clipping
};

// Scanline rasterization: pixel (c, r) is set iff its center (c+0.5, r+0.5)
// lies inside the polygon under the even-odd rule, half-open on both axes.
RasterResult rasterize(const Polygon& poly, cv::Size canvas);

// Union of rasterized polygons on one canvas.
cv::Mat1b rasterize_union(const std::vector<Polygon>& polys, cv::Size canvas);

// Crack-following boundary trace: closed loops of lattice-corner vertices
// such that rasterize() reproduces the mask exactly (holes trace as their
// own loops). Pixel (r, c) occupies [c, c+1] x [r, r+1].
std::vector<Polygon> trace_boundary_loops(const cv::Mat1b& mask);

// Serialization: "x0,y0,x1,y1,..." with optional ";transcript" handled by callers.
std::string polygon_to_string(const Polygon& poly);
Polygon polygon_from_string(const std::string& s);

}  // namespace istr
