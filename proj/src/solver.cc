#include "ptzcalib/solver.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

#include <Eigen/Cholesky>

#include "ptzcalib/geometry.h"

namespace ptzcalib {

namespace {

using RowMajorMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr double kMinDiagonal = 1e-6;
constexpr double kMaxDiagonal = 1e32;
constexpr double kMaxLambda = 1e32;

int AmbientSizeFor(Manifold manifold, int size) {
  switch (manifold) {
    case Manifold::kRotation:
      return 4;
    case Manifold::kUnitVector:
      return 3;
    case Manifold::kEuclidean:
      return size;
  }
  return size;
}

}  // namespace

namespace {

// rho(|b|^2) - rho(|a|^2), computed per entry so that tiny changes near the
// optimum are not lost to cancellation in the total cost.
double LossDifference(const LossFunction& loss, const Eigen::VectorXd& a,
                      const Eigen::VectorXd& b) {
  const double ds = ((b - a).array() * (b + a).array()).sum();
  if (loss.kind == LossKind::kTrivial) {
    return ds;
  }
  const double sa = a.squaredNorm();
  const double sb = b.squaredNorm();
  const double delta2 = loss.scale * loss.scale;
  if (sa <= delta2 && sb <= delta2) {
    return ds;
  }
  if (sa > delta2 && sb > delta2) {
    return 2.0 * loss.scale * ds / (std::sqrt(sa) + std::sqrt(sb));
  }
  return EvaluateLoss(loss.kind, loss.scale, sb).rho -
         EvaluateLoss(loss.kind, loss.scale, sa).rho;
}

}  // namespace

LossValue EvaluateLoss(LossKind kind, double scale, double squared_norm) {
  if (kind == LossKind::kTrivial) {
    return {squared_norm, 1.0};
  }
  const double delta2 = scale * scale;
  if (squared_norm <= delta2) {
    return {squared_norm, 1.0};
  }
  const double norm = std::sqrt(squared_norm);
  return {2.0 * scale * norm - delta2, scale / norm};
}

int TangentSize(Manifold manifold, int ambient_size) {
  switch (manifold) {
    case Manifold::kRotation:
      return 3;
    case Manifold::kUnitVector:
      return 2;
    case Manifold::kEuclidean:
      return ambient_size;
  }
  return ambient_size;
}

void ManifoldPlus(Manifold manifold, std::span<double> values,
                  std::span<const double> delta) {
  switch (manifold) {
    case Manifold::kEuclidean:
      for (size_t i = 0; i < values.size(); ++i) {
        values[i] += delta[i];
      }
      return;
    case Manifold::kRotation: {
      const Eigen::Quaterniond q(values[0], values[1], values[2], values[3]);
      const Eigen::Quaterniond updated =
          (ExpSO3(Eigen::Vector3d(delta[0], delta[1], delta[2])) * q)
              .normalized();
      values[0] = updated.w();
      values[1] = updated.x();
      values[2] = updated.y();
      values[3] = updated.z();
      return;
    }
    case Manifold::kUnitVector: {
      const Eigen::Vector3d dir(values[0], values[1], values[2]);
      const Eigen::Vector3d updated =
          SpherePlus(dir.normalized(), Eigen::Vector2d(delta[0], delta[1]));
      values[0] = updated.x();
      values[1] = updated.y();
      values[2] = updated.z();
      return;
    }
  }
}

const char* TerminationName(Termination termination) {
  switch (termination) {
    case Termination::kConverged:
      return "converged";
    case Termination::kMaxIterations:
      return "max-iter";
    case Termination::kFailure:
      return "failure";
  }
  return "unknown";
}

int Problem::AddParameterBlock(std::vector<double> values, Manifold manifold) {
  const int expected = AmbientSizeFor(manifold, static_cast<int>(values.size()));
  if (static_cast<int>(values.size()) != expected || values.empty()) {
    throw std::invalid_argument("parameter block size does not match manifold");
  }
  ParameterBlock block;
  block.manifold = manifold;
  block.lower.assign(values.size(), -std::numeric_limits<double>::infinity());
  block.upper.assign(values.size(), std::numeric_limits<double>::infinity());
  block.values = std::move(values);
  blocks_.push_back(std::move(block));
  return static_cast<int>(blocks_.size()) - 1;
}

void Problem::SetFixed(int block, bool fixed) { blocks_.at(block).fixed = fixed; }

void Problem::SetBounds(int block, int index, double lower, double upper) {
  ParameterBlock& b = blocks_.at(block);
  if (b.manifold != Manifold::kEuclidean) {
    throw std::invalid_argument("bounds are only supported on euclidean blocks");
  }
  b.lower.at(index) = lower;
  b.upper.at(index) = upper;
  ProjectToBounds(block);
}

void Problem::SetEliminated(int block, bool eliminated) {
  blocks_.at(block).eliminated = eliminated;
}

void Problem::AddResidualBlock(std::shared_ptr<const CostFunction> cost,
                               LossFunction loss, std::vector<int> blocks) {
  const std::vector<BlockLayout> layout = cost->Layout();
  if (layout.size() != blocks.size()) {
    throw std::invalid_argument("residual block arity mismatch");
  }
  for (size_t i = 0; i < blocks.size(); ++i) {
    const ParameterBlock& b = blocks_.at(blocks[i]);
    if (b.manifold != layout[i].manifold ||
        static_cast<int>(b.values.size()) != layout[i].size) {
      throw std::invalid_argument("residual block layout mismatch");
    }
  }
  residuals_.push_back({std::move(cost), loss, std::move(blocks)});
}

void Problem::ProjectToBounds(int block) {
  ParameterBlock& b = blocks_[block];
  for (size_t i = 0; i < b.values.size(); ++i) {
    b.values[i] = std::clamp(b.values[i], b.lower[i], b.upper[i]);
  }
}

double Problem::Cost() const {
  double cost = 0.0;
  std::vector<const double*> params;
  Eigen::VectorXd r;
  for (const ResidualBlock& rb : residuals_) {
    params.clear();
    for (const int b : rb.blocks) {
      params.push_back(blocks_[b].values.data());
    }
    r.resize(rb.cost->NumResiduals());
    if (!rb.cost->Evaluate(params, r.data(), {}) || !r.allFinite()) {
      return std::numeric_limits<double>::infinity();
    }
    cost += 0.5 * EvaluateLoss(rb.loss.kind, rb.loss.scale, r.squaredNorm()).rho;
  }
  return cost;
}

bool Problem::ResidualOf(int residual_block, Eigen::VectorXd* residual) const {
  const ResidualBlock& rb = residuals_.at(residual_block);
  std::vector<const double*> params;
  for (const int b : rb.blocks) {
    params.push_back(blocks_[b].values.data());
  }
  residual->resize(rb.cost->NumResiduals());
  return rb.cost->Evaluate(params, residual->data(), {}) && residual->allFinite();
}

namespace {

// Per-linearization state of one eliminated block.
struct EliminatedBlock {
  int block = -1;
  int tangent = 0;
  Eigen::MatrixXd v;
  Eigen::VectorXd g;
  // (camera block, J_c^T J_e) for every active block sharing a residual.
  std::vector<std::pair<int, Eigen::MatrixXd>> w;

  Eigen::MatrixXd& W(int camera_block, int camera_tangent) {
    for (auto& [id, m] : w) {
      if (id == camera_block) {
        return m;
      }
    }
    w.emplace_back(camera_block, Eigen::MatrixXd::Zero(camera_tangent, tangent));
    return w.back().second;
  }
};

}  // namespace

SolveReport Solve(Problem& problem, const SolverOptions& options) {
  SolveReport report;
  auto& blocks = problem.blocks_;
  auto& residuals = problem.residuals_;

  // An eliminated block is honored only when every residual touching it
  // touches no other eliminated block.
  std::vector<char> eliminated(blocks.size(), 0);
  for (size_t b = 0; b < blocks.size(); ++b) {
    eliminated[b] = blocks[b].eliminated && !blocks[b].fixed;
  }
  for (const auto& rb : residuals) {
    int count = 0;
    for (const int b : rb.blocks) {
      count += eliminated[b];
    }
    if (count > 1) {
      for (const int b : rb.blocks) {
        eliminated[b] = 0;
      }
    }
  }

  std::vector<int> tangent(blocks.size());
  std::vector<int> camera_offset(blocks.size(), -1);
  std::vector<int> elim_index(blocks.size(), -1);
  int num_camera = 0;
  int num_elim = 0;
  for (size_t b = 0; b < blocks.size(); ++b) {
    tangent[b] = TangentSize(blocks[b].manifold,
                             static_cast<int>(blocks[b].values.size()));
    if (blocks[b].fixed) {
      continue;
    }
    if (eliminated[b]) {
      elim_index[b] = num_elim++;
    } else {
      camera_offset[b] = num_camera;
      num_camera += tangent[b];
    }
  }
  if (num_camera == 0 && num_elim == 0) {
    report.termination = Termination::kFailure;
    report.message = "no free parameter blocks";
    return report;
  }

  std::vector<const double*> params;
  std::vector<double*> jac_ptrs;
  std::vector<RowMajorMatrix> jacs;
  Eigen::VectorXd r;

  double cost = problem.Cost();
  report.initial_cost = cost;
  report.final_cost = cost;
  if (!std::isfinite(cost)) {
    report.termination = Termination::kFailure;
    report.message = "residuals not finite at the initial point";
    return report;
  }
  report.accepted_costs.push_back(cost);

  double lambda = options.initial_lambda;
  Eigen::MatrixXd u(num_camera, num_camera);
  Eigen::VectorXd gc(num_camera);
  std::vector<EliminatedBlock> elim(num_elim);

  // Unweighted residuals at the current point, one per residual block.
  std::vector<Eigen::VectorXd> current(residuals.size());
  std::vector<Eigen::VectorXd> trial(residuals.size());

  bool relinearize = true;
  while (true) {
    if (relinearize) {
      u.setZero();
      gc.setZero();
      for (size_t b = 0; b < blocks.size(); ++b) {
        if (elim_index[b] >= 0) {
          EliminatedBlock& e = elim[elim_index[b]];
          e.block = static_cast<int>(b);
          e.tangent = tangent[b];
          e.v = Eigen::MatrixXd::Zero(tangent[b], tangent[b]);
          e.g = Eigen::VectorXd::Zero(tangent[b]);
          e.w.clear();
        }
      }
      bool finite = true;
      for (size_t ri = 0; ri < residuals.size(); ++ri) {
        const auto& rb = residuals[ri];
        const int m = rb.cost->NumResiduals();
        const size_t k = rb.blocks.size();
        params.clear();
        jacs.resize(k);
        jac_ptrs.assign(k, nullptr);
        for (size_t i = 0; i < k; ++i) {
          const int b = rb.blocks[i];
          params.push_back(blocks[b].values.data());
          if (!blocks[b].fixed) {
            jacs[i].resize(m, tangent[b]);
            jac_ptrs[i] = jacs[i].data();
          }
        }
        r.resize(m);
        if (!rb.cost->Evaluate(params, r.data(), jac_ptrs) || !r.allFinite()) {
          finite = false;
          break;
        }
        current[ri] = r;
        const LossValue loss =
            EvaluateLoss(rb.loss.kind, rb.loss.scale, r.squaredNorm());
        const double w = std::sqrt(loss.rho_prime);
        r *= w;
        int elim_slot = -1;
        for (size_t i = 0; i < k; ++i) {
          if (jac_ptrs[i] == nullptr) {
            continue;
          }
          jacs[i] *= w;
          if (!jacs[i].allFinite()) {
            finite = false;
          }
          if (elim_index[rb.blocks[i]] >= 0) {
            elim_slot = static_cast<int>(i);
          }
        }
        if (!finite) {
          break;
        }
        for (size_t i = 0; i < k; ++i) {
          const int bi = rb.blocks[i];
          if (jac_ptrs[i] == nullptr || elim_index[bi] >= 0) {
            continue;
          }
          const int oi = camera_offset[bi];
          gc.segment(oi, tangent[bi]).noalias() += jacs[i].transpose() * r;
          for (size_t j = 0; j < k; ++j) {
            const int bj = rb.blocks[j];
            if (jac_ptrs[j] == nullptr || elim_index[bj] >= 0) {
              continue;
            }
            u.block(oi, camera_offset[bj], tangent[bi], tangent[bj]).noalias() +=
                jacs[i].transpose() * jacs[j];
          }
        }
        if (elim_slot >= 0) {
          EliminatedBlock& e = elim[elim_index[rb.blocks[elim_slot]]];
          const RowMajorMatrix& je = jacs[elim_slot];
          e.v.noalias() += je.transpose() * je;
          e.g.noalias() += je.transpose() * r;
          for (size_t i = 0; i < k; ++i) {
            const int bi = rb.blocks[i];
            if (jac_ptrs[i] == nullptr || static_cast<int>(i) == elim_slot) {
              continue;
            }
            e.W(bi, tangent[bi]).noalias() += jacs[i].transpose() * je;
          }
        }
      }
      if (!finite) {
        report.termination = Termination::kFailure;
        report.message = "non-finite residual or jacobian during linearization";
        return report;
      }
      double gradient_max = gc.size() > 0 ? gc.cwiseAbs().maxCoeff() : 0.0;
      for (const auto& e : elim) {
        gradient_max = std::max(gradient_max, e.g.cwiseAbs().maxCoeff());
      }
      if (gradient_max < options.gradient_tolerance) {
        report.termination = Termination::kConverged;
        report.message = "gradient tolerance reached";
        break;
      }
      relinearize = false;
    }

    if (report.iterations >= options.max_iterations) {
      report.termination = Termination::kMaxIterations;
      report.message = "maximum iterations reached";
      break;
    }
    ++report.iterations;

    // Damped reduced system.
    Eigen::MatrixXd s = u;
    Eigen::VectorXd rhs = -gc;
    for (int i = 0; i < num_camera; ++i) {
      s(i, i) += lambda * std::clamp(u(i, i), kMinDiagonal, kMaxDiagonal);
    }
    bool solvable = true;
    std::vector<Eigen::MatrixXd> v_inv(num_elim);
    for (int ei = 0; ei < num_elim && solvable; ++ei) {
      EliminatedBlock& e = elim[ei];
      Eigen::MatrixXd vd = e.v;
      for (int i = 0; i < e.tangent; ++i) {
        vd(i, i) += lambda * std::clamp(e.v(i, i), kMinDiagonal, kMaxDiagonal);
      }
      const Eigen::LLT<Eigen::MatrixXd> llt(vd);
      if (llt.info() != Eigen::Success) {
        solvable = false;
        break;
      }
      v_inv[ei] = llt.solve(Eigen::MatrixXd::Identity(e.tangent, e.tangent));
      for (const auto& [ci, wci] : e.w) {
        const Eigen::MatrixXd wv = wci * v_inv[ei];
        rhs.segment(camera_offset[ci], tangent[ci]).noalias() += wv * e.g;
        for (const auto& [cj, wcj] : e.w) {
          s.block(camera_offset[ci], camera_offset[cj], tangent[ci],
                  tangent[cj])
              .noalias() -= wv * wcj.transpose();
        }
      }
    }

    Eigen::VectorXd delta_camera(num_camera);
    if (solvable && num_camera > 0) {
      const Eigen::LLT<Eigen::MatrixXd> llt(s);
      if (llt.info() != Eigen::Success) {
        solvable = false;
      } else {
        delta_camera = llt.solve(rhs);
        solvable = delta_camera.allFinite();
      }
    }

    double new_cost = std::numeric_limits<double>::infinity();
    double change = std::numeric_limits<double>::infinity();
    // Decrease predicted by the damped linear model.
    double predicted = 0.0;
    std::vector<std::vector<double>> saved;
    double step_norm2 = 0.0;
    double value_norm2 = 0.0;
    if (solvable) {
      step_norm2 = delta_camera.squaredNorm();
      for (int i = 0; i < num_camera; ++i) {
        const double d = lambda * std::clamp(u(i, i), kMinDiagonal, kMaxDiagonal);
        predicted += 0.5 * delta_camera(i) * (d * delta_camera(i) - gc(i));
      }
      saved.reserve(blocks.size());
      for (const auto& b : blocks) {
        saved.push_back(b.values);
        for (const double v : b.values) {
          value_norm2 += v * v;
        }
      }
      for (size_t b = 0; b < blocks.size(); ++b) {
        if (camera_offset[b] >= 0) {
          const Eigen::VectorXd step =
              delta_camera.segment(camera_offset[b], tangent[b]);
          ManifoldPlus(blocks[b].manifold, blocks[b].values,
                       std::span<const double>(step.data(), step.size()));
          problem.ProjectToBounds(static_cast<int>(b));
        }
      }
      for (int ei = 0; ei < num_elim; ++ei) {
        const EliminatedBlock& e = elim[ei];
        Eigen::VectorXd b_e = -e.g;
        for (const auto& [ci, wci] : e.w) {
          b_e.noalias() -= wci.transpose() *
                           delta_camera.segment(camera_offset[ci], tangent[ci]);
        }
        const Eigen::VectorXd step = v_inv[ei] * b_e;
        step_norm2 += step.squaredNorm();
        for (int i = 0; i < e.tangent; ++i) {
          const double d =
              lambda * std::clamp(e.v(i, i), kMinDiagonal, kMaxDiagonal);
          predicted += 0.5 * step(i) * (d * step(i) - e.g(i));
        }
        ManifoldPlus(blocks[e.block].manifold, blocks[e.block].values,
                     std::span<const double>(step.data(), step.size()));
        problem.ProjectToBounds(e.block);
      }
      change = 0.0;
      double total = 0.0;
      bool finite = true;
      for (size_t ri = 0; ri < residuals.size() && finite; ++ri) {
        const auto& rb = residuals[ri];
        finite = problem.ResidualOf(static_cast<int>(ri), &trial[ri]);
        if (finite) {
          change += 0.5 * LossDifference(rb.loss, current[ri], trial[ri]);
          total += 0.5 * EvaluateLoss(rb.loss.kind, rb.loss.scale,
                                      trial[ri].squaredNorm())
                             .rho;
        }
      }
      if (!finite || !std::isfinite(change)) {
        change = std::numeric_limits<double>::infinity();
      } else {
        new_cost = std::min(cost, total);
      }
    }

    const double tol = options.parameter_tolerance;
    if (solvable && std::sqrt(step_norm2) <= tol * (std::sqrt(value_norm2) + tol)) {
      for (size_t b = 0; b < blocks.size(); ++b) {
        blocks[b].values = std::move(saved[b]);
      }
      report.termination = Termination::kConverged;
      report.message = "parameter tolerance reached";
      break;
    }

    // A change below the resolution of the residual evaluation is a tie; the
    // model decides, and the run ends on the function tolerance.
    const double noise = 64.0 * std::numeric_limits<double>::epsilon() * cost;
    const bool tie = change >= 0.0 && change <= noise && predicted > 0.0 &&
                     predicted <= noise;
    if (solvable && (change < 0.0 || tie)) {
      const double decrease = -change / std::max(cost, 1e-300);
      cost = new_cost;
      std::swap(current, trial);
      report.accepted_costs.push_back(cost);
      lambda = std::max(lambda * 0.1, 1e-16);
      relinearize = true;
      if (options.verbose) {
        std::fprintf(stderr, "iter %3d cost %.9e lambda %.2e\n",
                     report.iterations, cost, lambda);
      }
      if (decrease < options.function_tolerance || cost == 0.0) {
        report.termination = Termination::kConverged;
        report.message = "function tolerance reached";
        break;
      }
    } else {
      if (!saved.empty()) {
        for (size_t b = 0; b < blocks.size(); ++b) {
          blocks[b].values = std::move(saved[b]);
        }
      }
      if (options.verbose) {
        std::fprintf(stderr, "reject change %.3e lambda %.2e\n", change, lambda);
      }
      lambda *= 10.0;
      if (lambda > kMaxLambda) {
        report.termination = Termination::kConverged;
        report.message = "no further decrease possible";
        break;
      }
    }
  }
  report.final_cost = cost;
  return report;
}

double CheckJacobian(const CostFunction& cost,
                     const std::vector<std::vector<double>>& point) {
  const std::vector<BlockLayout> layout = cost.Layout();
  if (layout.size() != point.size()) {
    throw std::invalid_argument("CheckJacobian: arity mismatch");
  }
  const int m = cost.NumResiduals();
  const size_t k = layout.size();

  std::vector<RowMajorMatrix> analytic(k);
  std::vector<double*> jac_ptrs(k);
  std::vector<const double*> params(k);
  for (size_t i = 0; i < k; ++i) {
    analytic[i].resize(m, TangentSize(layout[i].manifold, layout[i].size));
    jac_ptrs[i] = analytic[i].data();
    params[i] = point[i].data();
  }
  Eigen::VectorXd r(m);
  if (!cost.Evaluate(params, r.data(), jac_ptrs)) {
    return std::numeric_limits<double>::infinity();
  }

  double worst = 0.0;
  Eigen::VectorXd r_plus(m);
  Eigen::VectorXd r_minus(m);
  for (size_t i = 0; i < k; ++i) {
    const int t = static_cast<int>(analytic[i].cols());
    for (int j = 0; j < t; ++j) {
      // Tangent coordinates are zero at the expansion point for manifolds.
      const double x = layout[i].manifold == Manifold::kEuclidean
                           ? point[i][j]
                           : 0.0;
      const double h = 1e-6 * (1.0 + std::abs(x));
      std::vector<double> delta(t, 0.0);
      std::vector<double> plus = point[i];
      std::vector<double> minus = point[i];
      delta[j] = h;
      ManifoldPlus(layout[i].manifold, plus, delta);
      delta[j] = -h;
      ManifoldPlus(layout[i].manifold, minus, delta);
      std::vector<const double*> p_plus = params;
      std::vector<const double*> p_minus = params;
      p_plus[i] = plus.data();
      p_minus[i] = minus.data();
      if (!cost.Evaluate(p_plus, r_plus.data(), {}) ||
          !cost.Evaluate(p_minus, r_minus.data(), {})) {
        return std::numeric_limits<double>::infinity();
      }
      for (int row = 0; row < m; ++row) {
        const double numeric = (r_plus(row) - r_minus(row)) / (2.0 * h);
        const double dev = std::abs(analytic[i](row, j) - numeric) /
                           std::max(1.0, std::abs(numeric));
        worst = std::max(worst, dev);
      }
    }
  }
  return worst;
}

}  // namespace ptzcalib
