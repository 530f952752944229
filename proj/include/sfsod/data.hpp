#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <utility>

#include "sfsod/errors.hpp"
#include "sfsod/math_util.hpp"

namespace sfsod {

/// Per-column robust location/scale used to map a fit back to the original
/// scale. Column 0 is left untouched when it is an intercept column.
struct StandardizationRecord {
    Eigen::VectorXd col_median;  // length p; 0 for skipped columns
    Eigen::VectorXd col_scale;   // length p; 1 for skipped columns
    double y_median = 0.0;
    bool intercept = false;  // column 0 is an all-ones intercept column

    /// Map coefficients fitted on standardized data to the original scale.
    Eigen::VectorXd beta_to_original(const Eigen::VectorXd& beta_std) const {
        Eigen::VectorXd b = beta_std;
        const Eigen::Index p = b.size();
        double offset = y_median;
        for (Eigen::Index j = intercept ? 1 : 0; j < p; ++j) {
            b[j] = beta_std[j] / col_scale[j];
            offset -= beta_std[j] * col_median[j] / col_scale[j];
        }
        if (intercept) b[0] = beta_std[0] + offset;
        return b;
    }
};

/// Regression data: response, design matrix, and (if standardized) the
/// transform record allowing exact back-transformation.
struct Dataset {
    Eigen::VectorXd y;
    Eigen::MatrixXd X;
    std::optional<StandardizationRecord> standardization;

    int n() const { return static_cast<int>(X.rows()); }
    int p() const { return static_cast<int>(X.cols()); }

    void validate() const {
        if (n() < 1 || p() < 1) throw DataError("dataset must have n >= 1 and p >= 1");
        if (y.size() != X.rows()) throw DimensionMismatch("y length does not match rows of X");
    }
};

/// Robust standardization: non-intercept columns of X are centered to zero
/// median and scaled to unit raw MAD; y is centered to zero median.
/// Throws ZeroMadColumn(j) when a non-intercept column has MAD 0.
inline Dataset standardize_robust(const Dataset& data, bool intercept) {
    data.validate();
    const int n = data.n(), p = data.p();
    StandardizationRecord rec;
    rec.col_median = Eigen::VectorXd::Zero(p);
    rec.col_scale = Eigen::VectorXd::Ones(p);
    rec.intercept = intercept;

    Dataset out;
    out.X = data.X;
    out.y = data.y;
    for (int j = intercept ? 1 : 0; j < p; ++j) {
        const double m = median(data.X.col(j));
        Eigen::VectorXd centered = data.X.col(j).array() - m;
        const double s = mad(centered);
        if (s == 0.0) throw ZeroMadColumn(j);
        rec.col_median[j] = m;
        rec.col_scale[j] = s;
        out.X.col(j) = centered / s;
    }
    rec.y_median = median(data.y);
    out.y.array() -= rec.y_median;
    out.standardization = rec;
    (void)n;
    return out;
}

/// Scale-only variant for models fitted without an intercept: no centering
/// of X or y, columns scaled to unit MAD.
inline Dataset standardize_scale_only(const Dataset& data) {
    data.validate();
    const int p = data.p();
    StandardizationRecord rec;
    rec.col_median = Eigen::VectorXd::Zero(p);
    rec.col_scale = Eigen::VectorXd::Ones(p);
    rec.intercept = false;
    rec.y_median = 0.0;

    Dataset out;
    out.X = data.X;
    out.y = data.y;
    for (int j = 0; j < p; ++j) {
        const double s = mad(data.X.col(j));
        if (s == 0.0) throw ZeroMadColumn(j);
        rec.col_scale[j] = s;
        out.X.col(j) = data.X.col(j) / s;
    }
    out.standardization = rec;
    return out;
}

}  // namespace sfsod
