#include "gnnamg/problems.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>

namespace gnnamg {

WeightDistribution WeightDistribution::lognormal(double mu, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("lognormal sigma must be positive");
  return {Tag::Lognormal, mu, sigma};
}

WeightDistribution WeightDistribution::uniform(double lo, double hi) {
  if (!(lo < hi) || hi <= 0.0) throw std::invalid_argument("uniform requires lo < hi, hi > 0");
  return {Tag::Uniform, lo, hi};
}

WeightDistribution WeightDistribution::parse(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ':');) parts.push_back(item);
  if (parts.empty()) throw std::invalid_argument("empty distribution");
  auto num = [&](std::size_t i, double fallback) {
    return parts.size() > i ? std::stod(parts[i]) : fallback;
  };
  if (parts[0] == "lognormal") return lognormal(num(1, 0.0), num(2, 1.0));
  if (parts[0] == "uniform") return uniform(num(1, 0.0), num(2, 1.0));
  throw std::invalid_argument("unknown distribution: " + text);
}

std::string WeightDistribution::describe() const {
  std::ostringstream out;
  out << (tag == Tag::Lognormal ? "lognormal:" : "uniform:") << first << ":" << second;
  return out.str();
}

double WeightDistribution::sample(Rng& rng) const {
  if (tag == Tag::Lognormal) {
    std::normal_distribution<double> normal(first, second);
    return std::exp(normal(rng));
  }
  std::uniform_real_distribution<double> u(first, second);
  for (;;) {
    const double w = u(rng);
    if (w > 0.0) return w;
  }
}

namespace {

constexpr int kMaxRetries = 10;

std::uint64_t retry_seed(std::uint64_t seed, int attempt) {
  return seed + 0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(attempt);
}

std::vector<Point2> uniform_points(index_t n, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Point2> pts(n);
  for (auto& p : pts) {
    p.x = u(rng);
    p.y = u(rng);
  }
  return pts;
}

struct DirectedKey {
  index_t u, v;
  int sx, sy;
  auto operator<=>(const DirectedKey&) const = default;
};

DirectedKey canonical(const DirectedKey& k) {
  const DirectedKey r{k.v, k.u, -k.sx, -k.sy};
  return std::min(k, r);
}

// Periodic Delaunay edges of c points in the unit cell, from the
// triangulation of the 3x3 ghost replication. Returns false when the ghost
// neighborhood cannot certify the edges or the result is inconsistent.
bool periodic_edges(const std::vector<Point2>& base, std::vector<DirectedKey>& out) {
  const auto c = static_cast<index_t>(base.size());
  std::vector<Point2> ghost;
  ghost.reserve(9 * c);
  for (int ox = -1; ox <= 1; ++ox)
    for (int oy = -1; oy <= 1; ++oy)
      for (const auto& p : base) ghost.push_back({p.x + ox, p.y + oy});
  const auto cell_of = [c](index_t g) { return static_cast<int>(g / c); };
  const auto off_of = [](int cell) { return std::pair{cell / 3 - 1, cell % 3 - 1}; };
  constexpr int kCentral = 4;

  std::vector<std::array<index_t, 3>> tris;
  try {
    tris = delaunay_triangulate(ghost);
  } catch (const GeometryError&) {
    return false;
  }

  std::set<DirectedKey> directed;
  for (const auto& t : tris) {
    const bool central = cell_of(t[0]) == kCentral || cell_of(t[1]) == kCentral ||
                         cell_of(t[2]) == kCentral;
    if (!central) continue;
    const Circle cc = circumcircle(ghost[t[0]], ghost[t[1]], ghost[t[2]]);
    if (cc.center.x - cc.radius < -1.0 || cc.center.x + cc.radius > 2.0 ||
        cc.center.y - cc.radius < -1.0 || cc.center.y + cc.radius > 2.0)
      return false;
    for (int k = 0; k < 3; ++k) {
      const index_t g1 = t[k], g2 = t[(k + 1) % 3];
      for (const auto& [from, to] : {std::pair{g1, g2}, std::pair{g2, g1}}) {
        if (cell_of(from) != kCentral) continue;
        const auto [sx, sy] = off_of(cell_of(to));
        directed.insert({from % c, to % c, sx, sy});
      }
    }
  }
  for (const auto& k : directed)
    if (!directed.contains({k.v, k.u, -k.sx, -k.sy})) return false;

  std::set<DirectedKey> canon;
  for (const auto& k : directed) canon.insert(canonical(k));
  out.assign(canon.begin(), canon.end());
  return true;
}

}  // namespace

BlockCirculantProblem generate_periodic_delaunay(int b, index_t c, const WeightDistribution& dist,
                                                 std::uint64_t seed) {
  if (b < 3) throw std::invalid_argument("periodic Delaunay problems need b >= 3");
  if (c < 2) throw std::invalid_argument("periodic Delaunay problems need c >= 2");

  for (int attempt = 0; attempt <= kMaxRetries; ++attempt) {
    Rng rng(retry_seed(seed, attempt));
    std::vector<Point2> base = uniform_points(c, rng);
    std::vector<DirectedKey> keys;
    if (!periodic_edges(base, keys)) continue;

    BlockCirculantProblem p;
    p.b = b;
    p.c = c;
    p.base_points = std::move(base);
    p.kind = MatrixKind::SPSDLaplacian;
    std::vector<double> diag(c, 0.0);
    for (const auto& k : keys) {
      const double w = dist.sample(rng);
      p.edges.push_back({k.u, k.v, {k.sx, k.sy}, w});
      diag[k.u] += w;
      diag[k.v] += w;
    }

    std::vector<Triplet> t;
    t.reserve(static_cast<std::size_t>(b) * b * (2 * p.edges.size() + c));
    for (int bx = 0; bx < b; ++bx) {
      for (int by = 0; by < b; ++by) {
        for (index_t u = 0; u < c; ++u) {
          const index_t l = p.global_index(bx, by, u);
          t.push_back({l, l, diag[u]});
        }
        for (const auto& e : p.edges) {
          const index_t l = p.global_index(bx, by, e.u);
          const index_t j = p.global_index(bx + e.offset.x, by + e.offset.y, e.v);
          t.push_back({l, j, -e.weight});
          t.push_back({j, l, -e.weight});
        }
      }
    }
    p.a = SparseMatrix::from_coordinates(t, p.size(), p.size());
    return p;
  }
  throw GeometryError("could not generate a periodic Delaunay problem after retries");
}

bool validate_block_circulant(const BlockCirculantProblem& p) {
  const index_t n = p.size();
  if (p.a.rows() != n || p.a.cols() != n || p.b < 1 || p.c < 1) return false;
  const index_t k = static_cast<index_t>(p.b) * p.c;
  const auto shift_x = [&](index_t g) { return ((g - k) % n + n) % n; };
  const auto shift_y = [&](index_t g) {
    const index_t block = g / p.c;
    const int bx = static_cast<int>(block / p.b);
    const int by = static_cast<int>(block % p.b);
    return p.global_index(bx, by - 1, g % p.c);
  };
  for (index_t l = 0; l < n; ++l) {
    const auto cols = p.a.row_cols(l);
    const auto vals = p.a.row_values(l);
    for (std::size_t q = 0; q < cols.size(); ++q) {
      const index_t j = cols[q];
      const index_t lx = shift_x(l), jx = shift_x(j);
      if (!p.a.contains(lx, jx) || p.a.coeff(lx, jx) != vals[q]) return false;
      const index_t ly = shift_y(l), jy = shift_y(j);
      if (!p.a.contains(ly, jy) || p.a.coeff(ly, jy) != vals[q]) return false;
    }
  }
  return true;
}

SparseMatrix laplacian_from_edges(index_t n, std::span<const std::array<index_t, 2>> edges,
                                  std::span<const double> weights) {
  if (edges.size() != weights.size()) throw DimensionError("one weight per edge required");
  std::vector<Triplet> t;
  t.reserve(4 * edges.size());
  std::vector<double> diag(n, 0.0);
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto [i, j] = edges[e];
    t.push_back({i, j, -weights[e]});
    t.push_back({j, i, -weights[e]});
    diag[i] += weights[e];
    diag[j] += weights[e];
  }
  for (index_t i = 0; i < n; ++i) t.push_back({i, i, diag[i]});
  return SparseMatrix::from_coordinates(t, n, n);
}

GraphLaplacian generate_delaunay_laplacian(index_t n, const WeightDistribution& dist,
                                           std::uint64_t seed) {
  if (n < 3) throw std::invalid_argument("Delaunay Laplacian needs n >= 3");
  for (int attempt = 0; attempt <= kMaxRetries; ++attempt) {
    Rng rng(retry_seed(seed, attempt));
    GraphLaplacian g;
    g.points = uniform_points(n, rng);
    try {
      g.triangles = delaunay_triangulate(g.points);
    } catch (const GeometryError&) {
      continue;
    }
    const auto edges = triangle_edges(g.triangles);
    std::vector<double> w(edges.size());
    for (auto& x : w) x = dist.sample(rng);
    g.a = laplacian_from_edges(n, edges, w);
    return g;
  }
  throw GeometryError("could not triangulate random points after retries");
}

Eigen::Matrix3d element_stiffness(const Point2& p0, const Point2& p1, const Point2& p2,
                                  double g) {
  const double area2 = orient2d(p0, p1, p2);
  if (area2 == 0.0) throw GeometryError("zero-area triangle");
  const std::array<const Point2*, 3> p{&p0, &p1, &p2};
  double bcoef[3], ccoef[3];
  for (int i = 0; i < 3; ++i) {
    const Point2& q1 = *p[(i + 1) % 3];
    const Point2& q2 = *p[(i + 2) % 3];
    bcoef[i] = q1.y - q2.y;
    ccoef[i] = q2.x - q1.x;
  }
  Eigen::Matrix3d k;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      k(i, j) = g * (bcoef[i] * bcoef[j] + ccoef[i] * ccoef[j]) / (2.0 * std::abs(area2));
  return k;
}

MeshProblem generate_fem_diffusion(index_t n, const WeightDistribution& g_dist,
                                   std::uint64_t seed) {
  if (n < 8) throw std::invalid_argument("FEM diffusion problems need n >= 8");
  for (int attempt = 0; attempt <= kMaxRetries; ++attempt) {
    Rng rng(retry_seed(seed, attempt));
    MeshProblem m;
    m.points = uniform_points(n, rng);
    try {
      m.triangles = delaunay_triangulate(m.points);
    } catch (const GeometryError&) {
      continue;
    }
    const bool degenerate = std::any_of(m.triangles.begin(), m.triangles.end(), [&](auto& t) {
      return std::abs(orient2d(m.points[t[0]], m.points[t[1]], m.points[t[2]])) < 1e-14;
    });
    if (degenerate) continue;

    std::vector<Triplet> trip;
    trip.reserve(9 * m.triangles.size());
    m.coefficients.reserve(m.triangles.size());
    for (const auto& t : m.triangles) {
      const double g = g_dist.sample(rng);
      m.coefficients.push_back(g);
      const Eigen::Matrix3d k = element_stiffness(m.points[t[0]], m.points[t[1]], m.points[t[2]], g);
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) trip.push_back({t[i], t[j], k(i, j)});
    }
    m.stiffness = SparseMatrix::from_coordinates(trip, n, n);

    m.boundary_nodes = hull_vertices(m.triangles, n);
    std::vector<index_t> local(n, -1);
    {
      std::vector<char> is_boundary(n, 0);
      for (const index_t i : m.boundary_nodes) is_boundary[i] = 1;
      for (index_t i = 0; i < n; ++i)
        if (!is_boundary[i]) {
          local[i] = static_cast<index_t>(m.interior_nodes.size());
          m.interior_nodes.push_back(i);
        }
    }
    if (m.interior_nodes.empty()) continue;
    std::vector<Triplet> inner;
    for (const auto& x : m.stiffness.to_triplets())
      if (local[x.row] >= 0 && local[x.col] >= 0)
        inner.push_back({local[x.row], local[x.col], x.value});
    const auto ni = static_cast<index_t>(m.interior_nodes.size());
    m.a = SparseMatrix::from_coordinates(inner, ni, ni);
    return m;
  }
  throw GeometryError("could not mesh random points after retries");
}

PointCloud point_cloud_from_string(const std::string& s) {
  if (s == "two-gaussians") return PointCloud::TwoGaussians;
  if (s == "five-gaussians") return PointCloud::FiveGaussians;
  if (s == "moons") return PointCloud::Moons;
  if (s == "circles") return PointCloud::Circles;
  throw std::invalid_argument("unknown point cloud: " + s);
}

const char* to_string(PointCloud cloud) {
  switch (cloud) {
    case PointCloud::TwoGaussians: return "two-gaussians";
    case PointCloud::FiveGaussians: return "five-gaussians";
    case PointCloud::Moons: return "moons";
    case PointCloud::Circles: return "circles";
  }
  return "?";
}

namespace {

// Two Gaussians: std 1.0 and 2.5, centers uniform in [-10, 10]^dim.
// Five Gaussians: std 1.0, centers uniform in [-10, 10]^2.
// Moons: two interleaved half circles of radius 1, noise std 0.1.
// Circles: radii 1 and 0.5, noise std 0.05.
DenseMatrix sample_cloud(const KnnSpec& spec, Rng& rng) {
  const index_t n = spec.n_points;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> centers(-10.0, 10.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  DenseMatrix x(n, spec.dim);
  switch (spec.cloud) {
    case PointCloud::TwoGaussians:
    case PointCloud::FiveGaussians: {
      const int clusters = spec.cloud == PointCloud::TwoGaussians ? 2 : 5;
      if (spec.cloud == PointCloud::FiveGaussians && spec.dim != 2)
        throw std::invalid_argument("five-gaussians is two dimensional");
      DenseMatrix mu(clusters, spec.dim);
      for (int c = 0; c < clusters; ++c)
        for (int d = 0; d < spec.dim; ++d) mu(c, d) = centers(rng);
      for (index_t i = 0; i < n; ++i) {
        const int c = static_cast<int>((static_cast<std::int64_t>(i) * clusters) / n);
        const double sd = clusters == 2 ? (c == 0 ? 1.0 : 2.5) : 1.0;
        for (int d = 0; d < spec.dim; ++d) x(i, d) = mu(c, d) + sd * normal(rng);
      }
      break;
    }
    case PointCloud::Moons: {
      if (spec.dim != 2) throw std::invalid_argument("moons are two dimensional");
      const index_t n_out = n / 2;
      for (index_t i = 0; i < n; ++i) {
        const double t = std::numbers::pi * unit(rng);
        if (i < n_out) {
          x(i, 0) = std::cos(t);
          x(i, 1) = std::sin(t);
        } else {
          x(i, 0) = 1.0 - std::cos(t);
          x(i, 1) = 0.5 - std::sin(t);
        }
        x(i, 0) += 0.1 * normal(rng);
        x(i, 1) += 0.1 * normal(rng);
      }
      break;
    }
    case PointCloud::Circles: {
      if (spec.dim != 2) throw std::invalid_argument("circles are two dimensional");
      const index_t n_out = n / 2;
      for (index_t i = 0; i < n; ++i) {
        const double t = 2.0 * std::numbers::pi * unit(rng);
        const double r = i < n_out ? 1.0 : 0.5;
        x(i, 0) = r * std::cos(t) + 0.05 * normal(rng);
        x(i, 1) = r * std::sin(t) + 0.05 * normal(rng);
      }
      break;
    }
  }
  return x;
}

}  // namespace

KnnProblem generate_knn_affinity_laplacian(const KnnSpec& spec, std::uint64_t seed) {
  const index_t n = spec.n_points;
  if (spec.k < 1 || spec.k >= n) throw std::invalid_argument("kNN requires 1 <= k < n");
  Rng rng(seed);
  KnnProblem out;
  out.points = sample_cloud(spec, rng);

  // Separate exact duplicates.
  {
    std::vector<index_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    auto row_less = [&](index_t a, index_t b) {
      for (int d = 0; d < spec.dim; ++d)
        if (out.points(a, d) != out.points(b, d)) return out.points(a, d) < out.points(b, d);
      return a < b;
    };
    std::sort(order.begin(), order.end(), row_less);
    std::uniform_real_distribution<double> tiny(-1e-9, 1e-9);
    for (index_t q = 1; q < n; ++q)
      if ((out.points.row(order[q]) - out.points.row(order[q - 1])).squaredNorm() == 0.0)
        for (int d = 0; d < spec.dim; ++d) out.points(order[q], d) += tiny(rng);
  }

  std::set<std::pair<index_t, index_t>> edges;
  std::vector<std::pair<double, index_t>> dist(n - 1);
  for (index_t i = 0; i < n; ++i) {
    index_t q = 0;
    for (index_t j = 0; j < n; ++j) {
      if (j == i) continue;
      dist[q++] = {(out.points.row(i) - out.points.row(j)).squaredNorm(), j};
    }
    std::partial_sort(dist.begin(), dist.begin() + spec.k, dist.end());
    for (int r = 0; r < spec.k; ++r) {
      const index_t j = dist[r].second;
      edges.insert({std::min(i, j), std::max(i, j)});
    }
  }

  out.degree = Vector::Zero(n);
  std::vector<std::tuple<index_t, index_t, double>> affinity;
  affinity.reserve(edges.size());
  for (const auto& [i, j] : edges) {
    const double s = std::exp(-(out.points.row(i) - out.points.row(j)).squaredNorm());
    affinity.emplace_back(i, j, s);
    out.degree[i] += s;
    out.degree[j] += s;
  }
  std::vector<Triplet> t;
  t.reserve(2 * affinity.size() + n);
  std::uniform_real_distribution<double> jitter(0.0, 0.2);
  for (index_t i = 0; i < n; ++i) {
    if (!(out.degree[i] > 0.0))
      throw GeometryError("isolated point in kNN graph (all affinities underflowed)");
    t.push_back({i, i, 1.0 + (spec.jitter ? jitter(rng) : 0.0)});
  }
  for (const auto& [i, j, s] : affinity) {
    const double v = -s / std::sqrt(out.degree[i] * out.degree[j]);
    t.push_back({i, j, v});
    t.push_back({j, i, v});
  }
  out.a = SparseMatrix::from_coordinates(t, n, n);
  out.jittered = spec.jitter;
  return out;
}

void write_points_csv(const std::string& path, const DenseMatrix& points) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << (points.cols() == 3 ? "x,y,z\n" : "x,y\n") << std::setprecision(17);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    for (Eigen::Index d = 0; d < points.cols(); ++d) out << (d ? "," : "") << points(i, d);
    out << "\n";
  }
}

void write_points_csv(const std::string& path, std::span<const Point2> points) {
  DenseMatrix m(points.size(), 2);
  for (std::size_t i = 0; i < points.size(); ++i) {
    m(i, 0) = points[i].x;
    m(i, 1) = points[i].y;
  }
  write_points_csv(path, m);
}

}  // namespace gnnamg
