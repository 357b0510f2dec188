#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "gnnamg/cycle.hpp"
#include "gnnamg/fourier.hpp"
#include "gnnamg/gnn.hpp"
#include "gnnamg/problems.hpp"
#include "gnnamg/train.hpp"

namespace py = pybind11;
using namespace gnnamg;

namespace {

using IndexArray = py::array_t<index_t, py::array::c_style | py::array::forcecast>;
using ValueArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

// (indptr, indices, data, shape) in scipy CSR order.
py::tuple to_csr(const SparseMatrix& a) {
  const auto& off = a.row_offsets();
  const auto& col = a.col_indices();
  const auto& val = a.values();
  return py::make_tuple(IndexArray(static_cast<py::ssize_t>(off.size()), off.data()),
                        IndexArray(static_cast<py::ssize_t>(col.size()), col.data()),
                        ValueArray(static_cast<py::ssize_t>(val.size()), val.data()),
                        py::make_tuple(a.rows(), a.cols()));
}

SparseMatrix from_csr(const IndexArray& indptr, const IndexArray& indices, const ValueArray& data,
                      index_t rows, index_t cols) {
  return SparseMatrix(rows, cols, {indptr.data(), indptr.data() + indptr.size()},
                      {indices.data(), indices.data() + indices.size()},
                      {data.data(), data.data() + data.size()});
}

CycleConfig cycle_config(const std::string& cycle, int s1, int s2) {
  CycleConfig cfg;
  cfg.cycle = cycle_type_from_string(cycle);
  cfg.s1 = s1;
  cfg.s2 = s2;
  cfg.validate();
  return cfg;
}

Hierarchy hierarchy(const SparseMatrix& a, const std::string& kind, const CycleConfig& cfg,
                    const ModelParameters* model) {
  const MatrixKind k = matrix_kind_from_string(kind);
  return model ? build_hierarchy(a, k, cfg, learned_provider(*model)) : build_hierarchy(a, k, cfg);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Learned AMG prolongations: native core";

  py::register_exception<Error>(m, "GnnamgError", PyExc_RuntimeError);

  py::class_<SparseMatrix>(m, "SparseMatrix")
      .def(py::init(&from_csr), py::arg("indptr"), py::arg("indices"), py::arg("data"),
           py::arg("rows"), py::arg("cols"))
      .def_property_readonly("shape", [](const SparseMatrix& a) { return py::make_tuple(a.rows(), a.cols()); })
      .def_property_readonly("nnz", &SparseMatrix::nnz)
      .def("csr", &to_csr)
      .def("to_dense", &SparseMatrix::to_dense)
      .def("matvec", [](const SparseMatrix& a, const Vector& x) { return Vector(spmv(a, x)); });

  m.def("read_matrix_market", &read_matrix_market);
  m.def("write_matrix_market", &write_matrix_market, py::arg("path"), py::arg("a"),
        py::arg("symmetric") = false);

  m.def("delaunay_laplacian", [](index_t n, std::uint64_t seed, const std::string& dist) {
        return generate_delaunay_laplacian(n, WeightDistribution::parse(dist), seed).a;
      }, py::arg("n"), py::arg("seed") = 0, py::arg("distribution") = "lognormal");
  m.def("periodic_delaunay", [](int b, index_t c, std::uint64_t seed, const std::string& dist) {
        return generate_periodic_delaunay(b, c, WeightDistribution::parse(dist), seed).a;
      }, py::arg("b"), py::arg("c"), py::arg("seed") = 0, py::arg("distribution") = "lognormal");
  m.def("fem_diffusion", [](index_t n, std::uint64_t seed, const std::string& dist) {
        return generate_fem_diffusion(n, WeightDistribution::parse(dist), seed).a;
      }, py::arg("n"), py::arg("seed") = 0, py::arg("distribution") = "lognormal:0:0.5");
  m.def("knn_laplacian", [](index_t n, int k, const std::string& cloud, bool jitter, std::uint64_t seed) {
        KnnSpec spec;
        spec.n_points = n;
        spec.k = k;
        spec.cloud = point_cloud_from_string(cloud);
        spec.jitter = jitter;
        return generate_knn_affinity_laplacian(spec, seed).a;
      }, py::arg("n") = 1024, py::arg("k") = 10, py::arg("cloud") = "two-gaussians",
      py::arg("jitter") = true, py::arg("seed") = 0);

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("mp_layers", &ModelConfig::mp_layers)
      .def_readwrite("mlp_depth", &ModelConfig::mlp_depth)
      .def_readwrite("width", &ModelConfig::width)
      .def_readwrite("encoder_concat", &ModelConfig::encoder_concat)
      .def_readwrite("indicators", &ModelConfig::indicators)
      .def("__repr__", &ModelConfig::describe);

  py::class_<ModelParameters>(m, "Model")
      .def_static("initialize", &ModelParameters::initialize, py::arg("config") = ModelConfig{},
                  py::arg("seed") = 0)
      .def_static("load", [](const std::string& dir) { return load_model(dir); })
      .def("save", [](const ModelParameters& p, const std::string& dir) { save_model(dir, p); })
      .def_readonly("config", &ModelParameters::config)
      .def_readonly("names", &ModelParameters::names)
      .def_readonly("tensors", &ModelParameters::tensors)
      .def("parameter_count", &ModelParameters::parameter_count)
      .def("prolongation", [](const ModelParameters& p, const SparseMatrix& a) {
        return learned_prolongation(p, a, classical_coarsening(a));
      });

  m.def("classical_prolongation", [](const SparseMatrix& a) {
    const Coarsening c = classical_coarsening(a);
    return direct_interpolation(a, c.splitting, c.pattern);
  });

  m.def("solve", [](const SparseMatrix& a, const Vector& b, const std::string& kind,
                    const ModelParameters* model, double tol, int max_iterations,
                    const std::string& cycle) {
        CycleConfig cfg = cycle_config(cycle, 1, 1);
        cfg.tolerance = tol;
        cfg.max_iterations = max_iterations;
        const Hierarchy h = hierarchy(a, kind, cfg, model);
        SolveResult r = solve(h, b, Vector::Zero(b.size()), cfg);
        return py::make_tuple(r.x, r.residual_history, r.converged);
      }, py::arg("a"), py::arg("b"), py::arg("kind") = "spd", py::arg("model") = nullptr,
      py::arg("tol") = 1e-8, py::arg("max_iterations") = 500, py::arg("cycle") = "w");

  m.def("convergence_factor", [](const SparseMatrix& a, const std::string& kind,
                                 const ModelParameters* model, const std::string& cycle,
                                 std::uint64_t seed) {
        const CycleConfig cfg = cycle_config(cycle, 1, 1);
        return asymptotic_convergence_factor(hierarchy(a, kind, cfg, model), cfg, seed);
      }, py::arg("a"), py::arg("kind") = "spsd", py::arg("model") = nullptr, py::arg("cycle") = "w",
      py::arg("seed") = 0);

  m.def("preconditioner_apply", [](const SparseMatrix& a, const Vector& r, const std::string& kind,
                                   const ModelParameters* model) {
        const CycleConfig cfg = cycle_config("w", 1, 1);
        return Vector(preconditioner_apply(hierarchy(a, kind, cfg, model), r, cfg));
      }, py::arg("a"), py::arg("r"), py::arg("kind") = "spd", py::arg("model") = nullptr);

  m.def("fourier_check", [](const ModelParameters& model, int b, index_t c, std::uint64_t seed) {
        const BlockCirculantProblem p = generate_periodic_delaunay(b, c, WeightDistribution::lognormal(), seed);
        const TiledCoarsening tiled = tile_splitting(p);
        const double fourier = loss_fourier(model, p, tiled, LossOptions{}, false).value;
        const TiledProlongation tp = learned_tiled_prolongation(model, p, tiled, LossOptions{});
        const double dense = dense_tiled_loss(extract_couplings(p.a, b, c, c), tp, FourierLossOptions{});
        return py::make_tuple(fourier, dense);
      }, py::arg("model"), py::arg("b") = 4, py::arg("c") = 8, py::arg("seed") = 0);

  m.def("train", [](std::size_t stage1, std::size_t stage2_fresh, std::size_t stage2_coarsened,
                    std::size_t batch_size, double lr, index_t c, std::uint64_t seed,
                    const std::string& loss_head, const ModelConfig& model, int stages) {
        TrainConfig cfg;
        cfg.stage1_count = stage1;
        cfg.stage2_fresh_count = stage2_fresh;
        cfg.stage2_coarsened_source_count = stage2_coarsened;
        cfg.batch_size = batch_size;
        cfg.lr = lr;
        cfg.c = c;
        cfg.seed = seed;
        cfg.loss_head = loss_head_from_string(loss_head);
        cfg.model = model;
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(cfg, stages);
        }
        std::vector<double> losses;
        for (const auto& b : r.log.batches) losses.push_back(b.mean_loss);
        return py::make_tuple(r.params, losses);
      }, py::arg("stage1") = 4000, py::arg("stage2_fresh") = 2000, py::arg("stage2_coarsened") = 2000,
      py::arg("batch_size") = 32, py::arg("lr") = 3e-3, py::arg("c") = 16, py::arg("seed") = 0,
      py::arg("loss_head") = "fourier", py::arg("model") = ModelConfig{}, py::arg("stages") = 2);

  m.def("evaluate", [](const ModelParameters& model, std::vector<index_t> sizes, std::size_t runs,
                       std::uint64_t seed) {
        SuiteSpec spec;
        spec.sizes = std::move(sizes);
        spec.runs = runs;
        spec.seed = seed;
        EvalReport r;
        {
          py::gil_scoped_release release;
          r = evaluate_suite(model, spec);
        }
        py::list rows;
        for (const auto& e : r.records)
          rows.append(py::make_tuple(e.size, e.seed, e.baseline_factor, e.learned_factor));
        return rows;
      }, py::arg("model"), py::arg("sizes"), py::arg("runs") = 10, py::arg("seed") = 0);
}
