#pragma once

#include <stdexcept>
#include <string>

namespace lmnff {

/// Broad failure class, used by the command line to pick an exit code.
enum class ErrorCategory {
    Validation, // malformed input, wrong arity, unsupported configuration
    Runtime     // numerical or algorithmic failure on well-formed input
};

class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& what)
        : std::runtime_error(what), category_(category) {}

    [[nodiscard]] ErrorCategory category() const noexcept { return category_; }

private:
    ErrorCategory category_;
};

#define LMNFF_DEFINE_ERROR(Name, Category)                                                         \
    class Name : public Error {                                                                    \
    public:                                                                                        \
        explicit Name(const std::string& what) : Error(ErrorCategory::Category, what) {}           \
    };

LMNFF_DEFINE_ERROR(ShapeError, Validation)
LMNFF_DEFINE_ERROR(InsufficientDataError, Validation)
LMNFF_DEFINE_ERROR(WrongKindError, Validation)
LMNFF_DEFINE_ERROR(UnsupportedError, Validation)
LMNFF_DEFINE_ERROR(AssumptionError, Validation)
LMNFF_DEFINE_ERROR(SchemaError, Validation)
LMNFF_DEFINE_ERROR(RankDeficiencyError, Runtime)
LMNFF_DEFINE_ERROR(SingularityError, Runtime)
LMNFF_DEFINE_ERROR(DivergenceError, Runtime)

#undef LMNFF_DEFINE_ERROR

/// Fine-tuning ran out of iterations before the constraints were met.
class CertifiabilityError : public Error {
public:
    CertifiabilityError(const std::string& what, double best_penalty)
        : Error(ErrorCategory::Runtime, what), best_penalty_(best_penalty) {}

    [[nodiscard]] double best_penalty() const noexcept { return best_penalty_; }

private:
    double best_penalty_;
};

} // namespace lmnff
