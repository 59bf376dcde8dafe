#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace ptzcalib {

enum class LossKind { kTrivial, kHuber };

struct LossFunction {
  LossKind kind = LossKind::kTrivial;
  // Huber threshold on the residual norm (not squared).
  double scale = 1.0;

  static LossFunction Trivial() { return {}; }
  static LossFunction Huber(double delta) { return {LossKind::kHuber, delta}; }
};

struct LossValue {
  double rho = 0.0;
  double rho_prime = 1.0;
};

// rho(s) and rho'(s) for a squared residual norm s.
// Huber: rho(s) = s for s <= delta^2, else 2 delta sqrt(s) - delta^2.
LossValue EvaluateLoss(LossKind kind, double scale, double squared_norm);

// How a parameter block is updated by a tangent-space step.
enum class Manifold {
  kEuclidean,
  // Unit quaternion stored as (w, x, y, z); step q <- Exp(delta) * q.
  kRotation,
  // Unit 3-vector; step along the great circle of the tangent step.
  kUnitVector,
};

int TangentSize(Manifold manifold, int ambient_size);

// Applies a tangent step to `values` in place.
void ManifoldPlus(Manifold manifold, std::span<double> values,
                  std::span<const double> delta);

struct BlockLayout {
  Manifold manifold = Manifold::kEuclidean;
  int size = 0;
};

// A residual term with analytic Jacobians. Jacobians are taken with respect to
// each block's tangent step and stored row-major (num_residuals x tangent).
class CostFunction {
 public:
  virtual ~CostFunction() = default;

  virtual int NumResiduals() const = 0;
  virtual std::vector<BlockLayout> Layout() const = 0;

  // `jacobians` may be empty (residuals only); individual entries may be null.
  // Returns false when the residual is undefined at `parameters`.
  virtual bool Evaluate(std::span<const double* const> parameters,
                        double* residuals,
                        std::span<double* const> jacobians) const = 0;
};

struct SolverOptions {
  int max_iterations = 100;
  double function_tolerance = 1e-10;
  double gradient_tolerance = 1e-12;
  // Relative step size below which the run stops.
  double parameter_tolerance = 1e-12;
  double initial_lambda = 1e-4;
  // Not used by the solver itself; carried for the callers that build losses.
  double huber_delta_px = 4.0;
  bool verbose = false;
};

enum class Termination { kConverged, kMaxIterations, kFailure };

const char* TerminationName(Termination termination);

struct SolveReport {
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  Termination termination = Termination::kFailure;
  std::string message;
  // Cost after the initial evaluation and after every accepted step.
  std::vector<double> accepted_costs;

  bool Usable() const { return termination != Termination::kFailure; }
};

class Problem {
 public:
  int AddParameterBlock(std::vector<double> values,
                        Manifold manifold = Manifold::kEuclidean);

  void SetFixed(int block, bool fixed = true);
  bool IsFixed(int block) const { return blocks_[block].fixed; }

  // Box constraint on one entry of a Euclidean block.
  void SetBounds(int block, int index, double lower, double upper);

  // Marks a block for Schur elimination. Honored only if no residual connects
  // two eliminated blocks.
  void SetEliminated(int block, bool eliminated = true);

  void AddResidualBlock(std::shared_ptr<const CostFunction> cost,
                        LossFunction loss, std::vector<int> blocks);

  int NumParameterBlocks() const { return static_cast<int>(blocks_.size()); }
  int NumResidualBlocks() const { return static_cast<int>(residuals_.size()); }

  std::span<const double> Values(int block) const { return blocks_[block].values; }
  std::span<double> MutableValues(int block) { return blocks_[block].values; }

  // 0.5 * sum of robustified squared residual norms; +inf when any residual
  // is undefined.
  double Cost() const;

  // Unrobustified residual vector of one residual block.
  bool ResidualOf(int residual_block, Eigen::VectorXd* residual) const;

 private:
  friend SolveReport Solve(Problem& problem, const SolverOptions& options);

  struct ParameterBlock {
    std::vector<double> values;
    Manifold manifold = Manifold::kEuclidean;
    bool fixed = false;
    bool eliminated = false;
    std::vector<double> lower;
    std::vector<double> upper;
  };
  struct ResidualBlock {
    std::shared_ptr<const CostFunction> cost;
    LossFunction loss;
    std::vector<int> blocks;
  };

  void ProjectToBounds(int block);

  std::vector<ParameterBlock> blocks_;
  std::vector<ResidualBlock> residuals_;
};

// Levenberg-Marquardt with Marquardt diagonal scaling, robust losses via
// square-root reweighting, and Schur elimination of marked blocks.
SolveReport Solve(Problem& problem, const SolverOptions& options);

// Worst relative deviation between the analytic Jacobian and central finite
// differences taken along each block's tangent space. Entries are compared as
// |analytic - numeric| / max(1, |numeric|).
double CheckJacobian(const CostFunction& cost,
                     const std::vector<std::vector<double>>& point);

}  // namespace ptzcalib
