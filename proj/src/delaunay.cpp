#include "gnnamg/delaunay.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace gnnamg {

double orient2d(const Point2& a, const Point2& b, const Point2& c) {
  return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
}

double incircle(const Point2& a, const Point2& b, const Point2& c, const Point2& d) {
  const double adx = a.x - d.x, ady = a.y - d.y;
  const double bdx = b.x - d.x, bdy = b.y - d.y;
  const double cdx = c.x - d.x, cdy = c.y - d.y;
  const double alift = adx * adx + ady * ady;
  const double blift = bdx * bdx + bdy * bdy;
  const double clift = cdx * cdx + cdy * cdy;
  return alift * (bdx * cdy - cdx * bdy) + blift * (cdx * ady - adx * cdy) +
         clift * (adx * bdy - bdx * ady);
}

Circle circumcircle(const Point2& a, const Point2& b, const Point2& c) {
  const double bx = b.x - a.x, by = b.y - a.y;
  const double cx = c.x - a.x, cy = c.y - a.y;
  const double d = 2.0 * (bx * cy - by * cx);
  if (d == 0.0) throw GeometryError("circumcircle of collinear points");
  const double b2 = bx * bx + by * by;
  const double c2 = cx * cx + cy * cy;
  const double ux = (cy * b2 - by * c2) / d;
  const double uy = (bx * c2 - cx * b2) / d;
  return {{a.x + ux, a.y + uy}, std::hypot(ux, uy)};
}

namespace {

struct Tri {
  std::array<index_t, 3> v;
  std::array<index_t, 3> nb;  // nb[k] lies across the edge opposite v[k]
  bool alive = true;
};

std::uint64_t hilbert_index(std::uint32_t x, std::uint32_t y, int order) {
  std::uint64_t d = 0;
  for (std::uint32_t s = 1u << (order - 1); s > 0; s >>= 1) {
    const std::uint32_t rx = (x & s) ? 1u : 0u;
    const std::uint32_t ry = (y & s) ? 1u : 0u;
    d += static_cast<std::uint64_t>(s) * s * ((3u * rx) ^ ry);
    if (ry == 0) {
      if (rx == 1) {
        x = s - 1 - x;
        y = s - 1 - y;
      }
      std::swap(x, y);
    }
  }
  return d;
}

class BowyerWatson {
 public:
  explicit BowyerWatson(std::span<const Point2> input) : n_(static_cast<index_t>(input.size())) {
    pts_.assign(input.begin(), input.end());
    double minx = pts_[0].x, maxx = minx, miny = pts_[0].y, maxy = miny;
    for (const auto& p : pts_) {
      minx = std::min(minx, p.x);
      maxx = std::max(maxx, p.x);
      miny = std::min(miny, p.y);
      maxy = std::max(maxy, p.y);
    }
    const double span = std::max({maxx - minx, maxy - miny, 1e-12});
    const double cx = 0.5 * (minx + maxx), cy = 0.5 * (miny + maxy);
    const double m = 1e3 * span;
    pts_.push_back({cx - 2.0 * m, cy - m});
    pts_.push_back({cx + 2.0 * m, cy - m});
    pts_.push_back({cx, cy + 2.0 * m});
    tris_.push_back({{n_, n_ + 1, n_ + 2}, {-1, -1, -1}, true});

    order_.resize(n_);
    std::iota(order_.begin(), order_.end(), 0);
    std::vector<std::uint64_t> key(n_);
    constexpr int kOrder = 16;
    const double scale = ((1u << kOrder) - 1) / span;
    for (index_t i = 0; i < n_; ++i) {
      const auto gx = static_cast<std::uint32_t>((pts_[i].x - minx) * scale);
      const auto gy = static_cast<std::uint32_t>((pts_[i].y - miny) * scale);
      key[i] = hilbert_index(gx, gy, kOrder);
    }
    std::stable_sort(order_.begin(), order_.end(),
                     [&](index_t a, index_t b) { return key[a] < key[b]; });
  }

  std::vector<std::array<index_t, 3>> run() {
    for (const index_t p : order_) insert(p);
    std::vector<std::array<index_t, 3>> out;
    for (const auto& t : tris_) {
      if (!t.alive) continue;
      if (t.v[0] >= n_ || t.v[1] >= n_ || t.v[2] >= n_) continue;
      out.push_back(t.v);
    }
    if (out.empty()) throw GeometryError("degenerate point set: all points collinear");
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  index_t locate(const Point2& p) {
    index_t t = last_;
    for (std::size_t steps = 0; steps < 4 * tris_.size() + 16; ++steps) {
      const Tri& tri = tris_[t];
      bool moved = false;
      for (int r = 0; r < 3; ++r) {
        const int k = (r + static_cast<int>(steps)) % 3;
        const Point2& a = pts_[tri.v[(k + 1) % 3]];
        const Point2& b = pts_[tri.v[(k + 2) % 3]];
        if (orient2d(a, b, p) < 0.0 && tri.nb[k] >= 0) {
          t = tri.nb[k];
          moved = true;
          break;
        }
      }
      if (!moved) return t;
    }
    throw GeometryError("point location did not terminate");
  }

  bool in_circle(index_t t, const Point2& p) const {
    const auto& v = tris_[t].v;
    return incircle(pts_[v[0]], pts_[v[1]], pts_[v[2]], p) > 0.0;
  }

  void insert(index_t pi) {
    const Point2& p = pts_[pi];
    const index_t start = locate(p);
    for (const index_t v : tris_[start].v)
      if (pts_[v].x == p.x && pts_[v].y == p.y)
        throw GeometryError("duplicate point " + std::to_string(pi));

    cavity_.clear();
    cavity_.push_back(start);
    mark_[start] = stamp_ + 1;
    ++stamp_;
    for (std::size_t q = 0; q < cavity_.size(); ++q) {
      const Tri& t = tris_[cavity_[q]];
      for (const index_t nb : t.nb) {
        if (nb < 0 || mark_[nb] == stamp_) continue;
        if (in_circle(nb, p)) {
          mark_[nb] = stamp_;
          cavity_.push_back(nb);
        }
      }
    }

    boundary_.clear();
    for (const index_t ti : cavity_) {
      const Tri& t = tris_[ti];
      for (int k = 0; k < 3; ++k) {
        const index_t nb = t.nb[k];
        if (nb >= 0 && mark_[nb] == stamp_) continue;
        boundary_.push_back({t.v[(k + 1) % 3], t.v[(k + 2) % 3], nb});
      }
    }
    for (const index_t ti : cavity_) {
      tris_[ti].alive = false;
      free_.push_back(ti);
    }

    struct BoundaryEdge {
      index_t a, b, outside, new_tri;
    };
    std::vector<BoundaryEdge> edges;
    edges.reserve(boundary_.size());
    for (const auto& e : boundary_) edges.push_back({e[0], e[1], e[2], -1});
    for (auto& e : edges) {
      Tri nt{{e.a, e.b, pi}, {-1, -1, e.outside}, true};
      index_t id;
      if (!free_.empty()) {
        id = free_.back();
        free_.pop_back();
        tris_[id] = nt;
      } else {
        id = static_cast<index_t>(tris_.size());
        tris_.push_back(nt);
        mark_.push_back(0);
      }
      e.new_tri = id;
      if (e.outside >= 0) {
        auto& on = tris_[e.outside].nb;
        for (int k = 0; k < 3; ++k) {
          const auto& ov = tris_[e.outside].v;
          const index_t x = ov[(k + 1) % 3], y = ov[(k + 2) % 3];
          if ((x == e.b && y == e.a) || (x == e.a && y == e.b)) on[k] = id;
        }
      }
    }
    // Across (b, p) is the new triangle whose edge starts at b; across
    // (p, a) is the one whose edge ends at a.
    for (auto& e : edges) {
      for (const auto& f : edges) {
        if (f.a == e.b) tris_[e.new_tri].nb[0] = f.new_tri;
        if (f.b == e.a) tris_[e.new_tri].nb[1] = f.new_tri;
      }
    }
    last_ = edges.front().new_tri;
  }

  index_t n_;
  std::vector<Point2> pts_;
  std::vector<Tri> tris_;
  std::vector<index_t> order_;
  std::vector<index_t> cavity_;
  std::vector<std::array<index_t, 3>> boundary_;
  std::vector<index_t> free_;
  std::vector<std::uint64_t> mark_{0};
  std::uint64_t stamp_ = 0;
  index_t last_ = 0;
};

}  // namespace

std::vector<std::array<index_t, 3>> delaunay_triangulate(std::span<const Point2> points) {
  if (points.size() < 3) throw GeometryError("need at least three points");
  BowyerWatson bw(points);
  return bw.run();
}

std::vector<std::array<index_t, 2>> triangle_edges(
    std::span<const std::array<index_t, 3>> triangles) {
  std::vector<std::array<index_t, 2>> e;
  e.reserve(3 * triangles.size());
  for (const auto& t : triangles)
    for (int k = 0; k < 3; ++k) {
      const index_t a = t[k], b = t[(k + 1) % 3];
      e.push_back({std::min(a, b), std::max(a, b)});
    }
  std::sort(e.begin(), e.end());
  e.erase(std::unique(e.begin(), e.end()), e.end());
  return e;
}

std::vector<index_t> hull_vertices(std::span<const std::array<index_t, 3>> triangles,
                                   index_t n_points) {
  std::map<std::array<index_t, 2>, int> count;
  for (const auto& t : triangles)
    for (int k = 0; k < 3; ++k) {
      const index_t a = t[k], b = t[(k + 1) % 3];
      ++count[{std::min(a, b), std::max(a, b)}];
    }
  std::vector<char> on(n_points, 0);
  for (const auto& [e, c] : count)
    if (c == 1) on[e[0]] = on[e[1]] = 1;
  std::vector<index_t> out;
  for (index_t i = 0; i < n_points; ++i)
    if (on[i]) out.push_back(i);
  return out;
}

}  // namespace gnnamg
