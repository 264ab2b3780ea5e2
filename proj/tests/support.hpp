// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <unistd.h>

#include "eclip/autodiff.hpp"
#include "eclip/pretrain.hpp"
#include "eclip/rng.hpp"
#include "eclip/tensor.hpp"

namespace eclip::test {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("eclip_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline Tensor random_tensor(Rng& rng, Shape shape, double scale = 1.0, bool requires_grad = true) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = scale * rng.normal();
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

inline Tensor positive_tensor(Rng& rng, Shape shape, bool requires_grad = true) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = 0.2 + rng.uniform();
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

inline Tensor unit_rows(Rng& rng, std::size_t rows, std::size_t dim, bool requires_grad = false) {
  return normalize(random_tensor(rng, {rows, dim}, 1.0, false)).clone_leaf(requires_grad);
}

/// Worst relative error between reverse-mode and coordinate-wise central
/// differences over every parameter.
inline double grad_error(const std::function<Tensor()>& f, const std::vector<Tensor>& params, double eps = 1e-5) {
  const auto exact = value_and_grad(f, params);
  const auto approx = finite_diff_grad([&] { return f().item(); }, params, eps);
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    worst = std::max(worst, relative_error(exact.grads[i], approx[i]));
  }
  return worst;
}

inline void expect_bitwise_equal(const Tensor& a, const Tensor& b) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) {
    ASSERT_EQ(a.data()[i], b.data()[i]) << "index " << i;
  }
}

/// Model small enough for multi-step training inside a unit test.
inline ModelConfig tiny_model() {
  auto c = ModelConfig::desk();
  c.image.width = c.text.width = 16;
  c.image.embed_dim = c.text.embed_dim = c.decoder.embed_dim = 8;
  c.image.blocks = c.text.blocks = 1;
  c.image.heads = c.text.heads = c.decoder.heads = 2;
  c.image.ffn_hidden = c.text.ffn_hidden = c.decoder.ffn_hidden = 16;
  c.decoder.blocks = 1;
  return c;
}

inline TrainConfig tiny_train() {
  TrainConfig c;
  c.batch_size = 4;
  c.stage1_epochs = 1;
  c.stage2_epochs = 1;
  c.num_queries = 3;
  c.warmup_steps = 2;
  c.queue_size = 16;
  c.seed = 7;
  c.model = tiny_model();
  return c;
}

inline GenConfig tiny_gen() {
  GenConfig g;
  g.grid_h = g.grid_w = 4;
  g.box_min = 1;
  g.box_max = 2;
  g.num_categories = 4;
  return g;
}

}  // namespace eclip::test
