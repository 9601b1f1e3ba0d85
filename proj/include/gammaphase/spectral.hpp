// spectral.hpp
// Fast solves of (shift + ax Lx + ay Ly) x = r with the five-point Laplacian on a node
// grid, by real-to-real FFTs. Per axis:
//   Neumann    all nodes, reflected boundary (DCT-I),
//   Dirichlet  interior nodes only, boundary values zero (DST-I).
// Lx = -d²/dx² has eigenvalues (2 - 2 cos(πk/(nx-1)))/hx².

#pragma once

#include <fftw3.h>

#include <cmath>
#include <memory>
#include <mutex>
#include <numbers>
#include <vector>

#include "gammaphase/errors.hpp"
#include "gammaphase/grid.hpp"

namespace gammaphase {

enum class SpectralBC { Neumann, Dirichlet };

namespace detail {

/// FFTW planning and plan destruction are not thread safe.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwBuffer {
  double* data = nullptr;
  explicit FftwBuffer(std::size_t n) : data(static_cast<double*>(fftw_malloc(sizeof(double) * n))) {
    if (data == nullptr) throw std::bad_alloc();
  }
  ~FftwBuffer() { fftw_free(data); }
  FftwBuffer(const FftwBuffer&) = delete;
  FftwBuffer& operator=(const FftwBuffer&) = delete;
};

}  // namespace detail

class SpectralSolver {
 public:
  SpectralSolver(const Grid& g, SpectralBC bc) : SpectralSolver(g, bc, bc) {}

  SpectralSolver(const Grid& g, SpectralBC bcx, SpectralBC bcy) : grid_(g), bcx_(bcx), bcy_(bcy) {
    const bool dx = bcx == SpectralBC::Dirichlet, dy = bcy == SpectralBC::Dirichlet;
    offx_ = dx ? 1 : 0;
    offy_ = dy ? 1 : 0;
    mx_ = dx ? g.nx - 2 : g.nx;
    my_ = dy ? g.ny - 2 : g.ny;
    if (mx_ < 1 || my_ < 1) throw ValidationError("spectral solve: grid too small for Dirichlet data");
    buf_ = std::make_unique<detail::FftwBuffer>(static_cast<std::size_t>(mx_) * my_);
    {
      std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
      plan_ = fftw_plan_r2r_2d(my_, mx_, buf_->data, buf_->data, dy ? FFTW_RODFT00 : FFTW_REDFT00,
                               dx ? FFTW_RODFT00 : FFTW_REDFT00, FFTW_ESTIMATE);
    }
    if (plan_ == nullptr) throw ParameterError("fftw: plan creation failed");
    lx_ = eigenvalues(mx_, g.nx, g.hx(), dx);
    ly_ = eigenvalues(my_, g.ny, g.hy(), dy);
    norm_ = (dx ? 2.0 * (mx_ + 1) : 2.0 * (mx_ - 1)) * (dy ? 2.0 * (my_ + 1) : 2.0 * (my_ - 1));
  }

  ~SpectralSolver() {
    std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
    fftw_destroy_plan(plan_);
  }
  SpectralSolver(const SpectralSolver&) = delete;
  SpectralSolver& operator=(const SpectralSolver&) = delete;

  SpectralBC bc_x() const { return bcx_; }
  SpectralBC bc_y() const { return bcy_; }

  /// out = (shift + ax Lx + ay Ly)⁻¹ in, over full nodal arrays. Nodes on a Dirichlet
  /// side are ignored on input and set to zero on output. A zero eigenvalue (Neumann in
  /// both directions, shift 0) drops the constant mode.
  void solve(const double* in, double* out, double shift, double ax, double ay) const {
    gather(in);
    fftw_execute(plan_);
    double* d = buf_->data;
    for (int j = 0; j < my_; ++j)
      for (int i = 0; i < mx_; ++i) {
        const double lam = shift + ax * lx_[i] + ay * ly_[j];
        d[static_cast<std::size_t>(j) * mx_ + i] *= lam > 0.0 ? 1.0 / (lam * norm_) : 0.0;
      }
    fftw_execute(plan_);
    scatter(out);
  }

  void solve(const std::vector<double>& in, std::vector<double>& out, double shift, double ax,
             double ay) const {
    out.resize(in.size());
    solve(in.data(), out.data(), shift, ax, ay);
  }

 private:
  static std::vector<double> eigenvalues(int m, int n, double h, bool dirichlet) {
    std::vector<double> lam(m);
    for (int k = 0; k < m; ++k) {
      const int mode = dirichlet ? k + 1 : k;
      lam[k] = (2.0 - 2.0 * std::cos(std::numbers::pi * mode / (n - 1))) / (h * h);
    }
    return lam;
  }

  void gather(const double* in) const {
    double* d = buf_->data;
    for (int j = 0; j < my_; ++j)
      for (int i = 0; i < mx_; ++i) d[static_cast<std::size_t>(j) * mx_ + i] = in[grid_.index(i + offx_, j + offy_)];
  }
  void scatter(double* out) const {
    const double* d = buf_->data;
    if (offx_ != 0 || offy_ != 0)
      for (std::size_t k = 0; k < grid_.nodes(); ++k) out[k] = 0.0;
    for (int j = 0; j < my_; ++j)
      for (int i = 0; i < mx_; ++i) out[grid_.index(i + offx_, j + offy_)] = d[static_cast<std::size_t>(j) * mx_ + i];
  }

  Grid grid_;
  SpectralBC bcx_, bcy_;
  int offx_ = 0, offy_ = 0;
  int mx_ = 0, my_ = 0;
  std::unique_ptr<detail::FftwBuffer> buf_;
  fftw_plan plan_ = nullptr;
  std::vector<double> lx_, ly_;
  double norm_ = 1.0;
};

}  // namespace gammaphase
