#pragma once

#include <algorithm>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "aqse/model.hpp"
#include "aqse/povm.hpp"

namespace aqse {

/// Outcome probabilities of a fixed rank-one POVM for arbitrary true states,
/// including states whose support subspace differs from the POVM's anchor.
///
/// p_i = (<a_i|psi_1>^2 + <a_i|psi_2>^2) / 2 for i < n; the last entry is the
/// complement outcome 1 - sum_i p_i.
class OutcomeModel {
public:
    OutcomeModel(const PsfModel& model, const RankOnePovm& povm)
        : sigma_(model.sigma), anchor_(povm.anchor) {
        const SubspaceFrame frame = subspace_frame(model, povm.anchor);
        basis_ = frame.basis;
        weights_ = povm.vectors * frame.coeffs;
    }

    int outcomes() const { return static_cast<int>(weights_.rows()) + 1; }
    const Theta& anchor() const { return anchor_; }

    void probabilities(const Theta& state, std::span<double> out) const {
        const int n = static_cast<int>(weights_.rows());
        const double shift = state.centroid - anchor_.centroid;
        const Eigen::VectorXd amp1 = weights_ * (basis_ * source_overlaps(shift - 0.5 * state.separation));
        const Eigen::VectorXd amp2 = weights_ * (basis_ * source_overlaps(shift + 0.5 * state.separation));
        double total = 0.0;
        for (int i = 0; i < n; ++i) {
            const double p = 0.5 * (amp1(i) * amp1(i) + amp2(i) * amp2(i));
            out[i] = std::clamp(p, 0.0, 1.0);
            total += out[i];
        }
        out[n] = std::clamp(1.0 - total, 0.0, 1.0);
    }

    std::vector<double> probabilities(const Theta& state) const {
        std::vector<double> out(outcomes());
        probabilities(state, out);
        return out;
    }

private:
    // <g_k|psi(. - y)> with the primitives centred at -s/2, +s/2 relative to
    // the anchor centroid and y also relative to it.
    Vec4 source_overlaps(double y) const {
        const double half = 0.5 * anchor_.separation;
        const double centers[4] = {-half, half, -half, half};
        const int orders[4] = {0, 0, 1, 1};
        Vec4 g;
        for (int k = 0; k < 4; ++k) g(k) = primitive_overlap_offset(sigma_, y - centers[k], orders[k], 0);
        return g;
    }

    double sigma_;
    Theta anchor_;
    Mat4 basis_;
    Eigen::Matrix<double, Eigen::Dynamic, 4> weights_;
};

inline std::vector<double> cross_probabilities(const PsfModel& model, const Theta& state, const RankOnePovm& povm) {
    state.validate();
    return OutcomeModel(model, povm).probabilities(state);
}

}  // namespace aqse
