#include <doctest.h>
#include <omp.h>

#include <vector>

#include "twoview/kernels.hpp"
#include "twoview/random.hpp"

using namespace twoview;
namespace k = twoview::kernels;

namespace {

template <typename T>
std::vector<T> random_vec(std::size_t n, Rng& rng) {
  std::vector<T> v(n);
  for (auto& x : v) x = T(rng.uniform(-1.0, 1.0));
  return v;
}

k::ConvGeometry random_conv(Rng& rng) {
  k::ConvGeometry g;
  g.batch = 1 + int(rng.uniform_index(3));
  g.kernel = 1 + int(rng.uniform_index(3));
  g.stride = 1 + int(rng.uniform_index(2));
  g.padding = int(rng.uniform_index(std::size_t(g.kernel)));
  g.in_h = g.kernel + int(rng.uniform_index(7));
  g.in_w = g.kernel + int(rng.uniform_index(7));
  g.in_c = 1 + int(rng.uniform_index(5));
  g.out_c = 1 + int(rng.uniform_index(6));
  g.out_h = k::ConvGeometry::output_extent(g.in_h, g.kernel, g.stride, g.padding);
  g.out_w = k::ConvGeometry::output_extent(g.in_w, g.kernel, g.stride, g.padding);
  return g;
}

template <typename T>
void check_close(const std::vector<T>& a, const std::vector<T>& b, double tol) {
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(double(a[i]) == doctest::Approx(double(b[i])).epsilon(tol).scale(1.0));
  }
}

template <typename T>
void conv_matches_reference(double tol) {
  Rng rng(sizeof(T));
  for (int trial = 0; trial < 40; ++trial) {
    const auto g = random_conv(rng);
    const auto in = random_vec<T>(g.input_size(), rng), w = random_vec<T>(g.weight_size(), rng);
    const auto b = random_vec<T>(std::size_t(g.out_c), rng), go = random_vec<T>(g.output_size(), rng);
    std::vector<T> out_p(g.output_size()), out_r(g.output_size());
    k::conv2d_forward<T>(g, in, w, b, out_p);
    k::reference::conv2d_forward<T>(g, in, w, b, out_r);
    check_close(out_p, out_r, tol);
    std::vector<T> gi_p(g.input_size()), gi_r(g.input_size());
    k::conv2d_backward_input<T>(g, go, w, gi_p);
    k::reference::conv2d_backward_input<T>(g, go, w, gi_r);
    check_close(gi_p, gi_r, tol);
    std::vector<T> gw_p(g.weight_size()), gw_r(g.weight_size()), gb_p(std::size_t(g.out_c)), gb_r(std::size_t(g.out_c));
    k::conv2d_backward_params<T>(g, in, go, gw_p, gb_p);
    k::reference::conv2d_backward_params<T>(g, in, go, gw_r, gb_r);
    check_close(gw_p, gw_r, tol);
    check_close(gb_p, gb_r, tol);
  }
}

template <typename T>
void dense_and_pool_match_reference(double tol) {
  Rng rng(100 + sizeof(T));
  for (int trial = 0; trial < 40; ++trial) {
    const k::DenseGeometry g{1 + int(rng.uniform_index(5)), 1 + int(rng.uniform_index(40)), 1 + int(rng.uniform_index(20))};
    const auto in = random_vec<T>(std::size_t(g.batch) * g.in, rng), w = random_vec<T>(std::size_t(g.in) * g.out, rng);
    const auto b = random_vec<T>(std::size_t(g.out), rng), go = random_vec<T>(std::size_t(g.batch) * g.out, rng);
    std::vector<T> o_p(go.size()), o_r(go.size()), gi_p(in.size()), gi_r(in.size());
    std::vector<T> gw_p(w.size()), gw_r(w.size()), gb_p(b.size()), gb_r(b.size());
    k::dense_forward<T>(g, in, w, b, o_p);
    k::reference::dense_forward<T>(g, in, w, b, o_r);
    check_close(o_p, o_r, tol);
    k::dense_backward_input<T>(g, go, w, gi_p);
    k::reference::dense_backward_input<T>(g, go, w, gi_r);
    check_close(gi_p, gi_r, tol);
    k::dense_backward_params<T>(g, in, go, gw_p, gb_p);
    k::reference::dense_backward_params<T>(g, in, go, gw_r, gb_r);
    check_close(gw_p, gw_r, tol);
    check_close(gb_p, gb_r, tol);

    k::PoolGeometry pg;
    pg.batch = 1 + int(rng.uniform_index(3));
    pg.kernel = 2 + int(rng.uniform_index(2));
    pg.stride = 1 + int(rng.uniform_index(2));
    pg.in_h = pg.kernel + int(rng.uniform_index(6));
    pg.in_w = pg.kernel + int(rng.uniform_index(6));
    pg.channels = 1 + int(rng.uniform_index(4));
    pg.out_h = (pg.in_h - pg.kernel) / pg.stride + 1;
    pg.out_w = (pg.in_w - pg.kernel) / pg.stride + 1;
    auto pin = random_vec<T>(pg.input_size(), rng);
    if (trial % 4 == 0) std::fill(pin.begin(), pin.end(), T(0.5));  // all ties
    std::vector<T> po_p(pg.output_size()), po_r(pg.output_size());
    std::vector<std::int32_t> a_p(pg.output_size()), a_r(pg.output_size());
    k::maxpool_forward<T>(pg, pin, po_p, a_p);
    k::reference::maxpool_forward<T>(pg, pin, po_r, a_r);
    CHECK(po_p == po_r);
    CHECK(a_p == a_r);
    const auto pgo = random_vec<T>(pg.output_size(), rng);
    std::vector<T> pgi_p(pg.input_size()), pgi_r(pg.input_size());
    k::maxpool_backward<T>(pg, pgo, a_p, pgi_p);
    k::reference::maxpool_backward<T>(pg, pgo, a_r, pgi_r);
    check_close(pgi_p, pgi_r, tol);
  }
}

}  // namespace

TEST_CASE("parallel convolution matches the serial reference") {
  conv_matches_reference<float>(1e-5);
  conv_matches_reference<double>(1e-12);
}

TEST_CASE("parallel dense and maxpool match the serial reference") {
  dense_and_pool_match_reference<float>(1e-5);
  dense_and_pool_match_reference<double>(1e-12);
}

TEST_CASE("reference convolution agrees with a direct formula") {
  // 1 x 3 x 3 x 1 input, 2x2 kernel, two output channels, no padding.
  k::ConvGeometry g;
  g.in_h = g.in_w = 3;
  g.in_c = 1;
  g.out_c = 2;
  g.kernel = 2;
  g.out_h = g.out_w = 2;
  const std::vector<double> in = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  // [ky][kx][in_c][out_c]
  const std::vector<double> w = {1, 0, 0, 1, 0, -1, 1, 0};
  const std::vector<double> b = {0.5, -0.5};
  std::vector<double> out(8);
  k::reference::conv2d_forward<double>(g, in, w, b, out);
  // NHWC output; channel 0 = x[y][x] + x[y+1][x+1] + 0.5, channel 1 = x[y][x+1] - x[y+1][x] - 0.5
  const double expect[8] = {1 + 5 + 0.5, 2 - 4 - 0.5, 2 + 6 + 0.5, 3 - 5 - 0.5,
                            4 + 8 + 0.5, 5 - 7 - 0.5, 5 + 9 + 0.5, 6 - 8 - 0.5};
  for (int i = 0; i < 8; ++i) CHECK(out[std::size_t(i)] == expect[i]);
}

TEST_CASE("results do not depend on the thread count") {
  Rng rng(77);
  k::ConvGeometry g;
  g.batch = 5;
  g.in_h = g.in_w = 17;
  g.in_c = 6;
  g.out_c = 9;
  g.kernel = 3;
  g.padding = 1;
  g.out_h = g.out_w = 17;
  const auto in = random_vec<float>(g.input_size(), rng), w = random_vec<float>(g.weight_size(), rng);
  const auto b = random_vec<float>(9, rng), go = random_vec<float>(g.output_size(), rng);
  auto run = [&](int threads) {
    omp_set_num_threads(threads);
    std::vector<float> out(g.output_size()), gi(g.input_size()), gw(g.weight_size()), gb(9);
    k::conv2d_forward<float>(g, in, w, b, out);
    k::conv2d_backward_input<float>(g, go, w, gi);
    k::conv2d_backward_params<float>(g, in, go, gw, gb);
    out.insert(out.end(), gi.begin(), gi.end());
    out.insert(out.end(), gw.begin(), gw.end());
    out.insert(out.end(), gb.begin(), gb.end());
    return out;
  };
  const auto one = run(1);
  CHECK(run(3) == one);
  CHECK(run(8) == one);
  omp_set_num_threads(omp_get_num_procs());
}
