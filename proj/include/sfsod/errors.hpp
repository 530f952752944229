#pragma once

#include <stdexcept>
#include <string>

namespace sfsod {

/// Base class for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// A data error: the inputs violate a documented precondition.
struct DataError : Error {
    explicit DataError(const std::string& msg) : Error(msg) {}
};

struct DimensionMismatch : DataError {
    explicit DimensionMismatch(const std::string& msg) : DataError(msg) {}
};

/// Column j has zero median absolute deviation; it must be dropped upstream.
struct ZeroMadColumn : DataError {
    int column;
    explicit ZeroMadColumn(int j)
        : DataError("column " + std::to_string(j) + " has zero MAD"), column(j) {}
};

struct RankDeficient : DataError {
    explicit RankDeficient(const std::string& msg) : DataError(msg) {}
};

struct EmptyEnsemble : DataError {
    EmptyEnsemble() : DataError("candidate set is empty") {}
};

struct FoldTooSmall : DataError {
    explicit FoldTooSmall(const std::string& msg) : DataError(msg) {}
};

struct InvalidConfig : DataError {
    explicit InvalidConfig(const std::string& msg) : DataError(msg) {}
};

struct Infeasible : Error {
    explicit Infeasible(const std::string& msg) : Error(msg) {}
};

/// branch() was called on a node with no undecided indicator.
struct NoUndecided : Error {
    NoUndecided() : Error("node has no undecided indicator to branch on") {}
};

}  // namespace sfsod
