#include "istr/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace istr {

Polygon Polygon::rect(double x0, double y0, double x1, double y1) {
  return Polygon({{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}});
}

cv::Rect2d Polygon::bbox() const {
  if (vertices.empty()) return {};
  double x0 = vertices[0].x, x1 = x0, y0 = vertices[0].y, y1 = y0;
  for (const auto& v : vertices) {
    x0 = std::min(x0, v.x);
    x1 = std::max(x1, v.x);
    y0 = std::min(y0, v.y);
    y1 = std::max(y1, v.y);
  }
  return {x0, y0, x1 - x0, y1 - y0};
}

namespace {

// Clip a polygon against one half-plane keep(p) >= 0.
std::vector<Vec2> clip_edge(const std::vector<Vec2>& in,
                            double a, double b, double c) {
  // keep points with a*x + b*y + c >= 0
  std::vector<Vec2> out;
  const size_t n = in.size();
  for (size_t i = 0; i < n; ++i) {
    const Vec2& p = in[i];
    const Vec2& q = in[(i + 1) % n];
    const double dp = a * p.x + b * p.y + c;
    const double dq = a * q.x + b * q.y + c;
    if (dp >= 0) out.push_back(p);
    if ((dp >= 0) != (dq >= 0)) {
      const double t = dp / (dp - dq);
      out.push_back({p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)});
    }
  }
  return out;
}

}  // namespace

Polygon Polygon::clipped(cv::Size canvas) const {
  std::vector<Vec2> v = vertices;
  v = clip_edge(v, 1, 0, 0);                               // x >= 0
  v = clip_edge(v, -1, 0, static_cast<double>(canvas.width));   // x <= w
  v = clip_edge(v, 0, 1, 0);                               // y >= 0
  v = clip_edge(v, 0, -1, static_cast<double>(canvas.height));  // y <= h
  // intersection arithmetic can leave coordinates a few ulps outside
  for (auto& p : v) {
    p.x = std::clamp(p.x, 0.0, static_cast<double>(canvas.width));
    p.y = std::clamp(p.y, 0.0, static_cast<double>(canvas.height));
  }
  return Polygon(std::move(v));
}

RasterResult rasterize(const Polygon& poly, cv::Size canvas) {
  RasterResult res;
  res.mask = cv::Mat1b::zeros(canvas);
  if (!poly.valid()) {
    res.degenerate = true;
    return res;
  }
  const auto& v = poly.vertices;
  const size_t n = v.size();
  const cv::Rect2d bb = poly.bbox();
  const int r0 = std::max(0, static_cast<int>(std::floor(bb.y - 1)));
  const int r1 = std::min(canvas.height - 1,
                          static_cast<int>(std::ceil(bb.y + bb.height + 1)));
  long count = 0;
  std::vector<double> xs;
  for (int r = r0; r <= r1; ++r) {
    const double yc = r + 0.5;
    xs.clear();
    for (size_t i = 0; i < n; ++i) {
      const Vec2& p = v[i];
      const Vec2& q = v[(i + 1) % n];
      const double ylo = std::min(p.y, q.y);
      const double yhi = std::max(p.y, q.y);
      if (ylo <= yc && yc < yhi) {
        const double t = (yc - p.y) / (q.y - p.y);
        xs.push_back(p.x + t * (q.x - p.x));
      }
    }
    std::sort(xs.begin(), xs.end());
    auto* row = res.mask.ptr<uchar>(r);
    for (size_t i = 0; i + 1 < xs.size(); i += 2) {
      // pixel centers c + 0.5 in [xs[i], xs[i+1])
      int c0 = static_cast<int>(std::ceil(xs[i] - 0.5));
      int c1 = static_cast<int>(std::ceil(xs[i + 1] - 0.5)) - 1;
      c0 = std::max(c0, 0);
      c1 = std::min(c1, canvas.width - 1);
      for (int c = c0; c <= c1; ++c) {
        row[c] = 255;
        ++count;
      }
    }
  }
  res.degenerate = (count == 0);
  return res;
}

cv::Mat1b rasterize_union(const std::vector<Polygon>& polys, cv::Size canvas) {
  cv::Mat1b acc = cv::Mat1b::zeros(canvas);
  for (const auto& p : polys) {
    cv::bitwise_or(acc, rasterize(p, canvas).mask, acc);
  }
  return acc;
}

std::vector<Polygon> trace_boundary_loops(const cv::Mat1b& mask) {
  const int h = mask.rows, w = mask.cols;
  auto inside = [&](int r, int c) {
    return r >= 0 && r < h && c >= 0 && c < w && mask(r, c) != 0;
  };
  // Directed boundary edges between lattice corners, inside pixel on the
  // right of the walking direction. Key: corner (x, y) -> encoded dirs.
  // dirs: 0=+x, 1=+y, 2=-x, 3=-y
  const int dx[4] = {1, 0, -1, 0};
  const int dy[4] = {0, 1, 0, -1};
  std::vector<uint8_t> out_edges(static_cast<size_t>(h + 1) * (w + 1), 0);
  auto idx = [&](int x, int y) { return static_cast<size_t>(y) * (w + 1) + x; };
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      if (!inside(r, c)) continue;
      if (!inside(r - 1, c)) out_edges[idx(c, r)] |= 1 << 0;          // top: +x
      if (!inside(r + 1, c)) out_edges[idx(c + 1, r + 1)] |= 1 << 2;  // bottom: -x
      if (!inside(r, c - 1)) out_edges[idx(c, r + 1)] |= 1 << 3;      // left: -y
      if (!inside(r, c + 1)) out_edges[idx(c + 1, r)] |= 1 << 1;      // right: +y
    }
  std::vector<Polygon> loops;
  for (int y = 0; y <= h; ++y)
    for (int x = 0; x <= w; ++x) {
      for (int d0 = 0; d0 < 4; ++d0) {
        if (!(out_edges[idx(x, y)] & (1 << d0))) continue;
        Polygon loop;
        int cx = x, cy = y, dir = d0;
        do {
          loop.vertices.push_back({static_cast<double>(cx), static_cast<double>(cy)});
          out_edges[idx(cx, cy)] &= ~(1 << dir);
          cx += dx[dir];
          cy += dy[dir];
          // Prefer the rightmost available turn so touching loops separate.
          int next = -1;
          for (int turn : {1, 0, 3}) {  // right, straight, left
            const int cand = (dir + turn) & 3;
            if (out_edges[idx(cx, cy)] & (1 << cand)) {
              next = cand;
              break;
            }
          }
          if (next < 0) break;  // loop closed
          dir = next;
        } while (!(cx == x && cy == y && dir == d0));
        // Drop collinear intermediate vertices.
        Polygon simplified;
        const size_t n = loop.vertices.size();
        for (size_t i = 0; i < n; ++i) {
          const Vec2& prev = loop.vertices[(i + n - 1) % n];
          const Vec2& cur = loop.vertices[i];
          const Vec2& nxt = loop.vertices[(i + 1) % n];
          const double cross = (cur.x - prev.x) * (nxt.y - cur.y) -
                               (cur.y - prev.y) * (nxt.x - cur.x);
          if (std::abs(cross) > 1e-12) simplified.vertices.push_back(cur);
        }
        if (simplified.valid()) loops.push_back(std::move(simplified));
      }
    }
  return loops;
}

std::string polygon_to_string(const Polygon& poly) {
  std::ostringstream os;
  for (size_t i = 0; i < poly.vertices.size(); ++i) {
    if (i) os << ',';
    os << poly.vertices[i].x << ',' << poly.vertices[i].y;
  }
  return os.str();
}

Polygon polygon_from_string(const std::string& s) {
  std::vector<double> nums;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    if (tok.empty()) continue;
    size_t pos = 0;
    double val = std::stod(tok, &pos);
    nums.push_back(val);
  }
  if (nums.size() < 6 || nums.size() % 2 != 0)
    throw std::invalid_argument("polygon_from_string: need >=3 (x,y) pairs: " + s);
  Polygon p;
  for (size_t i = 0; i < nums.size(); i += 2) p.vertices.push_back({nums[i], nums[i + 1]});
  return p;
}

}  // namespace istr
