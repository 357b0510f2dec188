#include <doctest.h>

#include <numbers>

#include "gnnamg/tape.hpp"
#include "helpers.hpp"

using namespace gnnamg;
using testing::random_dense;

namespace {

using Builder = std::function<Var(Tape&, const Var&)>;

// Central-difference check of d sum(f(X) .* W) / dX against the tape.
double check_grad(const DenseMatrix& x0, const Builder& f, std::uint64_t seed) {
  Tape tape;
  const Var x = tape.leaf(x0);
  const Var y = f(tape, x);
  const DenseMatrix w = random_dense(y.rows(), y.cols(), seed);
  const Var out = ad::sum(ad::hadamard(y, tape.constant(w)));
  tape.backward(out);
  const DenseMatrix analytic = x.grad();

  const double h = 1e-6;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x0.rows(); ++i)
    for (Eigen::Index j = 0; j < x0.cols(); ++j) {
      auto eval = [&](double d) {
        DenseMatrix xp = x0;
        xp(i, j) += d;
        Tape t;
        return (f(t, t.leaf(xp)).value().array() * w.array()).sum();
      };
      const double numeric = (eval(h) - eval(-h)) / (2 * h);
      worst = std::max(worst, std::abs(numeric - analytic(i, j)) / std::max(1.0, std::abs(numeric)));
    }
  return worst;
}

}  // namespace

TEST_CASE("sum and Frobenius seeds") {
  Tape tape;
  const Var x = tape.leaf(random_dense(3, 4, 1));
  tape.backward(ad::sum(x));
  CHECK(x.grad() == DenseMatrix::Ones(3, 4));

  Tape t2;
  const Var a = t2.leaf(2.0 * DenseMatrix::Identity(3, 3));
  const Var loss = ad::frobenius_sq(ad::inverse(a));
  CHECK(loss.value()(0, 0) == doctest::Approx(0.75).epsilon(1e-15));
  t2.backward(loss);
  // d ||X^-1||^2 = -2 X^-T X^-1 X^-1 X^-T = -0.25 I at X = 2I
  CHECK((a.grad() + 0.25 * DenseMatrix::Identity(3, 3)).norm() <= 1e-15);
}

TEST_CASE("elementary gradients against finite differences") {
  const DenseMatrix x0 = random_dense(4, 3, 2);
  const DenseMatrix b = random_dense(3, 5, 3);
  const DenseMatrix sq = random_dense(4, 4, 4) + 4.0 * DenseMatrix::Identity(4, 4);
  const DenseMatrix pos = x0.array().abs() + 0.5;
  CHECK(check_grad(x0, [&](Tape& t, const Var& x) { return ad::matmul(x, t.constant(b)); }, 1) <= 1e-7);
  CHECK(check_grad(x0, [&](Tape& t, const Var& x) { return ad::matmul(t.constant(b.transpose()), ad::transpose(x)); }, 2) <= 1e-7);
  CHECK(check_grad(x0, [](Tape&, const Var& x) { return ad::relu(x); }, 3) <= 1e-7);
  CHECK(check_grad(x0, [](Tape&, const Var& x) { return ad::hadamard(x, x); }, 4) <= 1e-7);
  CHECK(check_grad(pos, [](Tape&, const Var& x) { return ad::reciprocal(x); }, 5) <= 1e-6);
  CHECK(check_grad(pos, [&](Tape& t, const Var& x) { return ad::divide(t.constant(x0), x); }, 6) <= 1e-6);
  CHECK(check_grad(x0, [](Tape&, const Var& x) { return ad::scale(ad::sub(x, ad::add(x, x)), 3.0); }, 7) <= 1e-7);
  CHECK(check_grad(sq, [](Tape&, const Var& x) { return ad::inverse(x); }, 8) <= 1e-6);
  CHECK(check_grad(x0, [](Tape&, const Var& x) { return ad::frobenius_sq(x); }, 9) <= 1e-6);
  CHECK(check_grad(x0, [](Tape&, const Var& x) { return ad::slice(x, 1, 1, 2, 2); }, 10) <= 1e-7);
  CHECK(check_grad(x0, [&](Tape& t, const Var& x) {
          return ad::add_bias(x, t.constant(random_dense(1, 3, 11)));
        }, 11) <= 1e-7);
  CHECK(check_grad(random_dense(1, 3, 12), [&](Tape& t, const Var& bias) {
          return ad::add_bias(t.constant(x0), bias);
        }, 12) <= 1e-7);
  CHECK(check_grad(x0, [](Tape&, const Var& x) {
          const std::vector<Var> parts{x, x};
          return ad::concat_cols(parts);
        }, 13) <= 1e-7);
}

TEST_CASE("clamp_magnitude") {
  DenseMatrix x(1, 4);
  x << 1e-12, -1e-12, 0.0, 2.0;
  Tape tape;
  const Var v = tape.leaf(x);
  const Var c = ad::clamp_magnitude(v, 1e-8);
  CHECK(c.value()(0, 0) == 1e-8);
  CHECK(c.value()(0, 1) == -1e-8);
  CHECK(c.value()(0, 2) == 1e-8);
  CHECK(c.value()(0, 3) == 2.0);
  tape.backward(ad::sum(c));
  CHECK(v.grad()(0, 0) == 0.0);
  CHECK(v.grad()(0, 3) == 1.0);
}

TEST_CASE("gather and scatter") {
  const std::vector<index_t> idx{2, 0, 2, 1};
  const DenseMatrix x0 = random_dense(3, 2, 5);
  const DenseMatrix g = kernels::gather_rows(x0, idx);
  CHECK(g.row(0) == x0.row(2));
  CHECK(g.row(2) == x0.row(2));
  const DenseMatrix s = kernels::scatter_add_rows(g, idx, 3);
  CHECK(s.row(2) == 2.0 * x0.row(2));
  CHECK(s.row(1) == x0.row(1));
  CHECK(check_grad(x0, [&](Tape&, const Var& x) { return ad::gather_rows(x, idx); }, 1) <= 1e-7);
  CHECK(check_grad(random_dense(4, 2, 6), [&](Tape&, const Var& x) {
          return ad::scatter_add_rows(x, idx, 3);
        }, 2) <= 1e-7);
  const std::vector<index_t> rows{0, 1, 1}, cols{1, 0, 1};
  CHECK(check_grad(random_dense(3, 1, 7), [&](Tape&, const Var& x) {
          return ad::scatter_to_dense(x, rows, cols, 2, 2);
        }, 3) <= 1e-7);
}

TEST_CASE("complex embedding") {
  const DenseMatrix re = random_dense(3, 3, 1), im = random_dense(3, 3, 2);
  const Eigen::MatrixXcd z = re.cast<std::complex<double>>() + std::complex<double>(0, 1) * im.cast<std::complex<double>>();
  const DenseMatrix e = embed_complex(z);
  CHECK(e.topLeftCorner(3, 3) == re);
  CHECK(e.bottomRightCorner(3, 3) == re);
  CHECK(e.bottomLeftCorner(3, 3) == im);
  CHECK(e.topRightCorner(3, 3) == -im);
  const Eigen::MatrixXcd zz = z * z;
  CHECK((embed_complex(zz) - e * e).norm() <= 1e-12);

  const std::vector<std::complex<double>> phases{{1.0, 0.0}, std::polar(1.0, std::numbers::pi / 3)};
  const DenseMatrix b0 = random_dense(2, 2, 3), b1 = random_dense(2, 2, 4);
  Tape tape;
  const std::vector<Var> blocks{tape.leaf(b0), tape.leaf(b1)};
  const Var emb = ad::complex_embed(blocks, phases);
  const Eigen::MatrixXcd ref = b0.cast<std::complex<double>>() + phases[1] * b1.cast<std::complex<double>>();
  CHECK((emb.value() - embed_complex(ref)).norm() <= 1e-15);
  CHECK(check_grad(b1, [&](Tape& t, const Var& x) {
          const std::vector<Var> bl{t.constant(b0), x};
          return ad::complex_embed(bl, phases);
        }, 5) <= 1e-7);
}

TEST_CASE("gradients accumulate over shared inputs") {
  Tape tape;
  const Var x = tape.leaf(DenseMatrix::Constant(1, 1, 3.0));
  const Var y = ad::add(ad::hadamard(x, x), x);
  tape.backward(ad::sum(y));
  CHECK(x.grad()(0, 0) == 7.0);
  const Var c = tape.constant(DenseMatrix::Ones(2, 2));
  CHECK_FALSE(tape.requires_grad(c.id()));
}
