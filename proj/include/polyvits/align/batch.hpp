#pragma once

#include <dlfcn.h>

#include <cstdint>
#include <cstdlib>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "polyvits/align/kernel_abi.h"
#include "polyvits/align/mas.hpp"
#include "polyvits/error.hpp"

namespace polyvits {

/// B x P_max x F_max log-likelihoods in the kernel layout (frame fastest).
struct BatchedLoglik {
  std::vector<double> data;
  int batch = 0;
  int max_p = 0;
  int max_f = 0;
  std::vector<std::int32_t> valid_p;
  std::vector<std::int32_t> valid_f;

  static BatchedLoglik from_items(const std::vector<Matrix>& items, const std::vector<int>& valid_p,
                                  const std::vector<int>& valid_f) {
    if (items.size() != valid_p.size() || items.size() != valid_f.size()) {
      fail(ErrorKind::kLayout, "batch item and length counts differ");
    }
    BatchedLoglik b;
    b.batch = static_cast<int>(items.size());
    for (const auto& m : items) {
      b.max_p = std::max(b.max_p, static_cast<int>(m.rows()));
      b.max_f = std::max(b.max_f, static_cast<int>(m.cols()));
    }
    b.data.assign(static_cast<std::size_t>(b.batch) * b.max_p * b.max_f, 0.0);
    for (int i = 0; i < b.batch; ++i) {
      const auto& m = items[static_cast<std::size_t>(i)];
      for (Eigen::Index p = 0; p < m.rows(); ++p) {
        for (Eigen::Index t = 0; t < m.cols(); ++t) b.at(i, static_cast<int>(p), static_cast<int>(t)) = m(p, t);
      }
    }
    b.valid_p.assign(valid_p.begin(), valid_p.end());
    b.valid_f.assign(valid_f.begin(), valid_f.end());
    return b;
  }

  double& at(int b, int p, int t) {
    return data[(static_cast<std::size_t>(b) * max_p + p) * max_f + t];
  }

  Matrix item(int b) const {
    Matrix m(max_p, max_f);
    for (int p = 0; p < max_p; ++p) {
      for (int t = 0; t < max_f; ++t) m(p, t) = data[(static_cast<std::size_t>(b) * max_p + p) * max_f + t];
    }
    return m;
  }

  void check_layout() const {
    if (batch < 0 || max_p < 0 || max_f < 0 ||
        data.size() != static_cast<std::size_t>(batch) * max_p * max_f ||
        valid_p.size() != static_cast<std::size_t>(batch) || valid_f.size() != static_cast<std::size_t>(batch)) {
      fail(ErrorKind::kLayout, "batched log-likelihood buffer does not match its declared shape");
    }
    for (int b = 0; b < batch; ++b) {
      if (valid_p[b] > max_p || valid_f[b] > max_f) {
        fail(ErrorKind::kLayout, "item " + std::to_string(b) + " valid lengths exceed the padded shape");
      }
    }
  }
};

/// Handle to an optional accelerated kernel shared library.
class MasKernel {
 public:
  /// Environment variable naming the kernel library; when unset the default
  /// library name is tried on the loader path.
  static constexpr const char* kPathEnv = "POLYVITS_MAS_KERNEL";
  static constexpr const char* kDefaultLibrary = "libpolyvits_mas_kernel.so";

  static std::shared_ptr<MasKernel> load(const std::string& path) {
    void* handle = ::dlopen(path.c_str(), RTLD_NOW | RTLD_LOCAL);
    if (handle == nullptr) return nullptr;
    auto fn = reinterpret_cast<polyvits_mas_batch_fn>(::dlsym(handle, POLYVITS_MAS_KERNEL_SYMBOL));
    if (fn == nullptr) {
      ::dlclose(handle);
      return nullptr;
    }
    return std::shared_ptr<MasKernel>(new MasKernel(handle, fn, path));
  }

  /// Auto-detected kernel, or null when none is installed.
  static std::shared_ptr<MasKernel> detect() {
    static std::once_flag once;
    static std::shared_ptr<MasKernel> kernel;
    std::call_once(once, [] {
      const char* env = std::getenv(kPathEnv);
      kernel = load(env != nullptr && *env != '\0' ? env : kDefaultLibrary);
    });
    return kernel;
  }

  MasKernel(const MasKernel&) = delete;
  MasKernel& operator=(const MasKernel&) = delete;
  ~MasKernel() { ::dlclose(handle_); }

  const std::string& path() const { return path_; }

  std::vector<AlignmentPath> run(const BatchedLoglik& batch) const {
    batch.check_layout();
    std::vector<std::int32_t> out(static_cast<std::size_t>(batch.batch) * batch.max_f, -1);
    std::int64_t failed = -1;
    const int rc = fn_(batch.data.data(), batch.batch, batch.max_p, batch.max_f, batch.valid_p.data(),
                       batch.valid_f.data(), out.data(), &failed);
    if (rc == POLYVITS_MAS_LAYOUT_ERROR) fail(ErrorKind::kLayout, "alignment kernel rejected the batch layout");
    if (rc == POLYVITS_MAS_INFEASIBLE) {
      fail(ErrorKind::kInfeasible, "batch item " + std::to_string(failed) + " is infeasible (valid_f < valid_p)");
    }
    if (rc != POLYVITS_MAS_OK) fail(ErrorKind::kLayout, "alignment kernel failed with code " + std::to_string(rc));
    std::vector<AlignmentPath> paths(static_cast<std::size_t>(batch.batch));
    for (int b = 0; b < batch.batch; ++b) {
      auto& path = paths[static_cast<std::size_t>(b)];
      const auto* row = out.data() + static_cast<std::size_t>(b) * batch.max_f;
      path.assignment.assign(row, row + batch.valid_f[b]);
      path.durations = durations_from_assignment(path.assignment, batch.valid_p[b]);
    }
    return paths;
  }

 private:
  MasKernel(void* handle, polyvits_mas_batch_fn fn, std::string path)
      : handle_(handle), fn_(fn), path_(std::move(path)) {}

  void* handle_;
  polyvits_mas_batch_fn fn_;
  std::string path_;
};

/// Reference loop over the batch, reporting the failing item index.
inline std::vector<AlignmentPath> mas_batch_reference(const BatchedLoglik& batch) {
  batch.check_layout();
  std::vector<AlignmentPath> paths;
  paths.reserve(static_cast<std::size_t>(batch.batch));
  for (int b = 0; b < batch.batch; ++b) {
    if (batch.valid_f[b] < batch.valid_p[b] || batch.valid_p[b] < 1) {
      fail(ErrorKind::kInfeasible, "batch item " + std::to_string(b) + " is infeasible (valid_f < valid_p)");
    }
    paths.push_back(mas(batch.item(b), batch.valid_p[b], batch.valid_f[b]));
  }
  return paths;
}

/// Uses the accelerated kernel when one is installed, else the reference.
inline std::vector<AlignmentPath> mas_batch(const BatchedLoglik& batch,
                                            const std::shared_ptr<MasKernel>& kernel = MasKernel::detect()) {
  if (kernel) return kernel->run(batch);
  return mas_batch_reference(batch);
}

}  // namespace polyvits
