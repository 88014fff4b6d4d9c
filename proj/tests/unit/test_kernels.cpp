#include <omp.h>

#include "doctest.h"
#include "patchssl/error.hpp"
#include "patchssl/kernels.hpp"
#include "unit/test_util.hpp"

using namespace patchssl;
using patchssl::testing::max_abs_diff;
using patchssl::testing::random_tensor;

namespace {

struct Case {
  std::size_t batch, cin, h, w, cout, k, stride, pad;
};

const Case kCases[] = {
    {3, 3, 8, 8, 4, 3, 1, 1},  {2, 2, 9, 7, 3, 3, 2, 1}, {5, 4, 6, 6, 2, 3, 2, 0},
    {1, 3, 5, 5, 6, 1, 1, 0},  {4, 2, 8, 8, 3, 5, 2, 2}, {17, 3, 4, 4, 2, 3, 1, 0},
    {9, 1, 3, 3, 1, 3, 2, 0},
};

template <typename T>
void check_against_reference(const Case& c, double tol) {
  Rng rng(c.batch * 1000 + c.k * 10 + c.stride);
  const auto g = ConvGeometry::make(c.cin, c.h, c.w, c.cout, c.k, c.stride, c.pad);
  const auto x = random_tensor<T>({c.batch, c.cin, c.h, c.w}, rng);
  const auto w = random_tensor<T>({c.cout, c.cin, c.k, c.k}, rng);
  const auto bias = random_tensor<T>({c.cout}, rng);
  const auto dy = random_tensor<T>({c.batch, c.cout, g.out_h, g.out_w}, rng);

  Tensor<T> y_par({c.batch, c.cout, g.out_h, g.out_w});
  Tensor<T> y_ref(y_par.shape());
  kernels::conv2d_forward<T>(g, c.batch, x.span(), w.span(), bias.span(), y_par.span());
  reference::conv2d_forward<T>(g, c.batch, x.span(), w.span(), bias.span(), y_ref.span());
  CHECK(max_abs_diff(y_par, y_ref) < tol);

  Tensor<T> dx_par(x.shape());
  Tensor<T> dx_ref(x.shape());
  kernels::conv2d_backward_data<T>(g, c.batch, dy.span(), w.span(), dx_par.span());
  reference::conv2d_backward_data<T>(g, c.batch, dy.span(), w.span(), dx_ref.span());
  CHECK(max_abs_diff(dx_par, dx_ref) < tol);

  Tensor<T> dw_par(w.shape());
  Tensor<T> dw_ref(w.shape());
  Tensor<T> db_par({c.cout});
  Tensor<T> db_ref({c.cout});
  kernels::conv2d_backward_weights<T>(g, c.batch, x.span(), dy.span(), dw_par.span(),
                                      db_par.span());
  reference::conv2d_backward_weights<T>(g, c.batch, x.span(), dy.span(), dw_ref.span(),
                                        db_ref.span());
  CHECK(max_abs_diff(dw_par, dw_ref) < tol * c.batch);
  CHECK(max_abs_diff(db_par, db_ref) < tol * c.batch);
}

}  // namespace

TEST_CASE("conv geometry arithmetic") {
  const auto g = ConvGeometry::make(3, 32, 32, 96, 3, 2, 1);
  CHECK(g.out_h == 16);
  CHECK(g.out_w == 16);
  CHECK(ConvGeometry::make(3, 8, 8, 1, 3, 2, 0).out_h == 3);
  CHECK(ConvGeometry::make(3, 3, 3, 1, 3, 2, 0).out_h == 1);
  CHECK_THROWS_AS(ConvGeometry::make(3, 2, 2, 1, 3, 1, 0), GeometryError);
}

TEST_CASE("parallel conv kernels match the serial reference (double)") {
  for (const auto& c : kCases) check_against_reference<double>(c, 1e-12);
}

TEST_CASE("parallel conv kernels match the serial reference (float)") {
  for (const auto& c : kCases) check_against_reference<float>(c, 1e-4);
}

TEST_CASE("im2col and col2im are adjoint") {
  Rng rng(5);
  const auto g = ConvGeometry::make(2, 7, 6, 1, 3, 2, 1);
  const auto x = random_tensor<double>({g.input_size()}, rng);
  const auto c = random_tensor<double>({g.col_rows() * g.col_cols()}, rng);
  Tensor<double> cols({g.col_rows() * g.col_cols()});
  Tensor<double> back({g.input_size()});
  kernels::im2col(g, x.data(), cols.data());
  kernels::col2im(g, c.data(), back.data());
  double lhs = 0.0;
  double rhs = 0.0;
  for (std::size_t i = 0; i < cols.size(); ++i) lhs += cols[i] * c[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * back[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("dense kernels match the serial reference") {
  Rng rng(11);
  const std::size_t b = 7, in = 13, out = 5;
  const auto x = random_tensor<double>({b, in}, rng);
  const auto w = random_tensor<double>({out, in}, rng);
  const auto bias = random_tensor<double>({out}, rng);
  const auto dy = random_tensor<double>({b, out}, rng);
  Tensor<double> y1({b, out}), y2({b, out});
  kernels::dense_forward<double>(b, in, out, x.span(), w.span(), bias.span(), y1.span());
  reference::dense_forward<double>(b, in, out, x.span(), w.span(), bias.span(), y2.span());
  CHECK(max_abs_diff(y1, y2) < 1e-12);
  Tensor<double> dx1({b, in}), dx2({b, in}), dw1({out, in}), dw2({out, in}), db1({out}), db2({out});
  kernels::dense_backward<double>(b, in, out, x.span(), w.span(), dy.span(), dx1.span(),
                                  dw1.span(), db1.span());
  reference::dense_backward<double>(b, in, out, x.span(), w.span(), dy.span(), dx2.span(),
                                    dw2.span(), db2.span());
  CHECK(max_abs_diff(dx1, dx2) < 1e-12);
  CHECK(max_abs_diff(dw1, dw2) < 1e-12);
  CHECK(max_abs_diff(db1, db2) < 1e-12);
}

TEST_CASE("kernel results do not depend on the thread count") {
  Rng rng(3);
  const std::size_t batch = 37;
  const auto g = ConvGeometry::make(4, 10, 10, 6, 3, 1, 1);
  const auto x = random_tensor<float>({batch, 4, 10, 10}, rng);
  const auto w = random_tensor<float>({6, 4, 3, 3}, rng);
  const auto dy = random_tensor<float>({batch, 6, 10, 10}, rng);
  auto run = [&](int threads) {
    omp_set_num_threads(threads);
    Tensor<float> y({batch, 6, 10, 10});
    Tensor<float> dw({6, 4, 3, 3});
    Tensor<float> db({6});
    kernels::conv2d_forward<float>(g, batch, x.span(), w.span(), {}, y.span());
    kernels::conv2d_backward_weights<float>(g, batch, x.span(), dy.span(), dw.span(), db.span());
    return std::make_tuple(y, dw, db);
  };
  const auto one = run(1);
  const auto four = run(4);
  omp_set_num_threads(omp_get_num_procs());
  CHECK(std::get<0>(one) == std::get<0>(four));
  CHECK(std::get<1>(one) == std::get<1>(four));
  CHECK(std::get<2>(one) == std::get<2>(four));
}

TEST_CASE("kernels reject mismatched buffers") {
  const auto g = ConvGeometry::make(1, 4, 4, 1, 3, 1, 1);
  Tensor<float> x({1, 1, 4, 4});
  Tensor<float> w({1, 1, 3, 3});
  Tensor<float> y({1, 1, 3, 3});
  CHECK_THROWS_AS(kernels::conv2d_forward<float>(g, 1, x.span(), w.span(), {}, y.span()),
                  ShapeError);
}
