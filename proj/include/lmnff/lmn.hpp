#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"

namespace lmnff {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Axis-orthogonal Gaussian over the validity-input space.
struct ValidityFunction {
    VectorXd centers;
    VectorXd widths; // standard deviation per dimension, strictly positive
};

/// Affine local model: offset + gains . x_lin
struct LocalLinearModel {
    double offset = 0.0;
    VectorXd gains;

    [[nodiscard]] double evaluate(const VectorXd& x_lin) const { return offset + gains.dot(x_lin); }
};

/// Static local model network. Immutable once constructed.
///
/// The output is the validity-weighted blend of K affine local models. The
/// validities are normalized Gaussians evaluated in log-space with
/// max-subtraction, so inputs far away from every center still produce a
/// proper weight vector dominated by the nearest model.
class LocalModelNetwork {
public:
    LocalModelNetwork() = default;

    LocalModelNetwork(std::vector<LocalLinearModel> models, std::vector<ValidityFunction> validities,
                      std::size_t lin_dim, std::size_t val_dim)
        : models_(std::move(models)), validities_(std::move(validities)), lin_dim_(lin_dim),
          val_dim_(val_dim) {
        if (models_.empty())
            throw ShapeError("local model network needs at least one local model");
        if (models_.size() != validities_.size())
            throw ShapeError("local model network: " + std::to_string(models_.size()) +
                             " models but " + std::to_string(validities_.size()) + " validities");
        for (std::size_t i = 0; i < models_.size(); ++i) {
            if (static_cast<std::size_t>(models_[i].gains.size()) != lin_dim_)
                throw ShapeError("local model " + std::to_string(i) + " has " +
                                 std::to_string(models_[i].gains.size()) + " gains, expected " +
                                 std::to_string(lin_dim_));
            const auto& v = validities_[i];
            if (static_cast<std::size_t>(v.centers.size()) != val_dim_ ||
                static_cast<std::size_t>(v.widths.size()) != val_dim_)
                throw ShapeError("validity " + std::to_string(i) + " does not match val_dim " +
                                 std::to_string(val_dim_));
            for (Eigen::Index d = 0; d < v.widths.size(); ++d)
                if (!(v.widths[d] > 0.0) || !std::isfinite(v.widths[d]))
                    throw ShapeError("validity " + std::to_string(i) + " has non-positive width");
        }
    }

    [[nodiscard]] std::size_t size() const noexcept { return models_.size(); }
    [[nodiscard]] std::size_t lin_dim() const noexcept { return lin_dim_; }
    [[nodiscard]] std::size_t val_dim() const noexcept { return val_dim_; }
    [[nodiscard]] const std::vector<LocalLinearModel>& models() const noexcept { return models_; }
    [[nodiscard]] const std::vector<ValidityFunction>& validities() const noexcept {
        return validities_;
    }
    [[nodiscard]] const LocalLinearModel& model(std::size_t i) const { return models_.at(i); }

    /// Unnormalized log-validities, log mu_i(x_val).
    [[nodiscard]] VectorXd log_validities(const VectorXd& x_val) const {
        check_val(x_val);
        VectorXd logs(static_cast<Eigen::Index>(size()));
        for (std::size_t i = 0; i < size(); ++i) {
            const auto& v = validities_[i];
            const VectorXd z = (x_val - v.centers).cwiseQuotient(v.widths);
            logs[static_cast<Eigen::Index>(i)] = -0.5 * z.squaredNorm();
        }
        return logs;
    }

    /// Normalized validities Phi (on the simplex).
    [[nodiscard]] VectorXd validity_weights(const VectorXd& x_val) const {
        VectorXd logs = log_validities(x_val);
        const double top = logs.maxCoeff();
        VectorXd w = (logs.array() - top).exp().matrix();
        w /= w.sum();
        return w;
    }

    [[nodiscard]] double evaluate_with_weights(const VectorXd& x_lin, const VectorXd& phi) const {
        check_lin(x_lin);
        double y = 0.0;
        for (std::size_t i = 0; i < size(); ++i)
            y += phi[static_cast<Eigen::Index>(i)] * models_[i].evaluate(x_lin);
        return y;
    }

    [[nodiscard]] double evaluate(const VectorXd& x_lin, const VectorXd& x_val) const {
        return evaluate_with_weights(x_lin, validity_weights(x_val));
    }

    /// Validity-weighted gain vector sum_i Phi_i w_i (the LPV "scheduled" parameters).
    [[nodiscard]] VectorXd blended_gains(const VectorXd& phi) const {
        VectorXd g = VectorXd::Zero(static_cast<Eigen::Index>(lin_dim_));
        for (std::size_t i = 0; i < size(); ++i)
            g += phi[static_cast<Eigen::Index>(i)] * models_[i].gains;
        return g;
    }

    /// Same validities, different local models (used by fine-tuning).
    [[nodiscard]] LocalModelNetwork with_models(std::vector<LocalLinearModel> models) const {
        return LocalModelNetwork(std::move(models), validities_, lin_dim_, val_dim_);
    }

private:
    void check_lin(const VectorXd& x) const {
        if (static_cast<std::size_t>(x.size()) != lin_dim_)
            throw ShapeError("linear input has length " + std::to_string(x.size()) + ", expected " +
                             std::to_string(lin_dim_));
    }
    void check_val(const VectorXd& x) const {
        if (static_cast<std::size_t>(x.size()) != val_dim_)
            throw ShapeError("validity input has length " + std::to_string(x.size()) +
                             ", expected " + std::to_string(val_dim_));
    }

    std::vector<LocalLinearModel> models_;
    std::vector<ValidityFunction> validities_;
    std::size_t lin_dim_ = 0;
    std::size_t val_dim_ = 0;
};

[[nodiscard]] inline VectorXd validity_weights(const VectorXd& x_val, const LocalModelNetwork& net) {
    return net.validity_weights(x_val);
}

[[nodiscard]] inline double evaluate(const VectorXd& x_lin, const VectorXd& x_val,
                                     const LocalModelNetwork& net) {
    return net.evaluate(x_lin, x_val);
}

} // namespace lmnff
