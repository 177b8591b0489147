#include "lepp/pde.hpp"

#include "lepp/errors.hpp"

namespace lepp::pde {

Kind parse_kind(std::string_view name)
{
    if (name == "ns") return Kind::ns;
    if (name == "swe") return Kind::swe;
    if (name == "pte") return Kind::pte;
    throw ConfigError("unknown dataset kind '" + std::string(name) + "' (ns, swe, pte)");
}

std::string to_string(Kind kind)
{
    switch (kind) {
    case Kind::ns: return "ns";
    case Kind::swe: return "swe";
    case Kind::pte: return "pte";
    }
    return "?";
}

std::size_t channels(Kind kind) { return kind == Kind::swe ? 3 : 1; }

void GridSpec::validate() const
{
    if (nx < 2 || ny < 2) throw ConfigError("grid needs at least 2x2 cells");
    if (!(Lx > 0.0 && Ly > 0.0)) throw ConfigError("domain lengths must be positive");
    if (!(dt > 0.0)) throw ConfigError("dt must be positive");
    if (frames < 1 || store_every < 1) throw ConfigError("frames and store_every must be >= 1");
}

}  // namespace lepp::pde
