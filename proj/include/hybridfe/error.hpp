#pragma once

#include <stdexcept>
#include <string>

namespace hybridfe
{

enum class error_kind
{
    invalid_argument,
    parse,
    validation,
    unsupported_degree,
    unsupported_order,
    singular_gram,
    coefficient,
    singular_system,
    accuracy,
    ill_posed,
    configuration,
    incomparable
};

inline const char*
to_string(error_kind k)
{
    switch (k)
    {
        case error_kind::invalid_argument: return "invalid argument";
        case error_kind::parse: return "parse error";
        case error_kind::validation: return "validation error";
        case error_kind::unsupported_degree: return "unsupported degree";
        case error_kind::unsupported_order: return "unsupported quadrature order";
        case error_kind::singular_gram: return "singular local Gram matrix";
        case error_kind::coefficient: return "invalid coefficient";
        case error_kind::singular_system: return "singular system";
        case error_kind::accuracy: return "accuracy error";
        case error_kind::ill_posed: return "ill-posed variant";
        case error_kind::configuration: return "configuration error";
        case error_kind::incomparable: return "incomparable layouts";
    }
    return "error";
}

class error : public std::runtime_error
{
    error_kind kind_;

public:
    error(error_kind k, const std::string& what)
        : std::runtime_error(what), kind_(k)
    {}

    error_kind kind() const noexcept { return kind_; }
};

[[noreturn]] inline void
raise(error_kind k, const std::string& what)
{
    throw error(k, what);
}

} // namespace hybridfe
