#pragma once

#include <array>
#include <span>
#include <vector>

#include "gnnamg/sparse.hpp"

namespace gnnamg {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

/// Twice the signed area of (a, b, c); positive when counter-clockwise.
double orient2d(const Point2& a, const Point2& b, const Point2& c);
/// Positive when d lies strictly inside the circumcircle of CCW (a, b, c).
double incircle(const Point2& a, const Point2& b, const Point2& c, const Point2& d);

struct Circle {
  Point2 center;
  double radius = 0.0;
};
Circle circumcircle(const Point2& a, const Point2& b, const Point2& c);

/// Delaunay triangulation of a planar point set by incremental Bowyer-Watson
/// insertion. Triangles are counter-clockwise vertex triples. Throws
/// GeometryError when every point is collinear or two points coincide.
std::vector<std::array<index_t, 3>> delaunay_triangulate(std::span<const Point2> points);

/// Undirected edges (i < j) of a triangle list, sorted.
std::vector<std::array<index_t, 2>> triangle_edges(
    std::span<const std::array<index_t, 3>> triangles);

/// Vertices lying on edges used by exactly one triangle.
std::vector<index_t> hull_vertices(std::span<const std::array<index_t, 3>> triangles,
                                   index_t n_points);

}  // namespace gnnamg
