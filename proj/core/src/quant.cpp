#include "apprentice/quant.hpp"

#include <cctype>

#include "apprentice/models.hpp"

namespace apprentice {

namespace {

bool parse_int(const std::string& s, int& out) {
    if (s.empty()) return false;
    int v = 0;
    for (char c : s) {
        if (!std::isdigit(static_cast<unsigned char>(c))) return false;
        v = v * 10 + (c - '0');
        if (v > 1000) return false;
    }
    out = v;
    return true;
}

} // namespace

QuantSpec QuantSpec::parse(const std::string& text) {
    // "<act>A,<weight>W", spaces allowed around the comma.
    std::string s;
    for (char c : text)
        if (!std::isspace(static_cast<unsigned char>(c))) s += c;
    const auto comma = s.find(',');
    if (comma == std::string::npos || s.size() < 4 || s[comma - 1] != 'A' || s.back() != 'W')
        throw ConfigError(cat("bad quant spec '", text, "' (expected e.g. \"8A,4W\")"));
    int act = 0, weight = 0;
    if (!parse_int(s.substr(0, comma - 1), act) ||
        !parse_int(s.substr(comma + 1, s.size() - comma - 2), weight))
        throw ConfigError(cat("bad quant spec '", text, "' (expected e.g. \"8A,4W\")"));
    if (act != 8 && act != 32)
        throw ConfigError(cat("unsupported activation bits ", act, " in '", text,
                              "' (supported: 8, 32)"));
    if (weight != 2 && weight != 4 && weight != 8 && weight != 32)
        throw ConfigError(cat("unsupported weight bits ", weight, " in '", text,
                              "' (supported: 2, 4, 8, 32)"));
    QuantSpec q;
    q.act_bits = act;
    q.weight_bits = weight;
    return q;
}

std::string QuantSpec::str() const {
    return cat(act_bits, "A,", weight_bits, "W");
}

void apply_policy(Model& model, const QuantSpec& spec) {
    auto layers = model.weight_layers();
    if (spec.exempt_first_last && spec.weight_bits != 32 && layers.size() < 3)
        throw ConfigError(cat("first/last exemption needs at least 3 weight layers, model has ",
                              layers.size()));
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const bool exempt = spec.exempt_first_last && (i == 0 || i + 1 == layers.size());
        layers[i]->quant =
            exempt ? WeightQuant::None : weight_quant_for_bits(spec.weight_bits);
    }
    for (ActSite* site : model.activation_sites())
        site->quant = spec.act_bits == 8 ? ActQuant::Bits8 : ActQuant::None;
}

QuantNodeCount count_quant_nodes(Model& model) {
    QuantNodeCount c;
    for (const WeightLayer* l : model.weight_layers())
        if (l->quant != WeightQuant::None) ++c.weight_nodes;
    for (const ActSite* s : model.activation_sites())
        if (s->quant != ActQuant::None) ++c.act_nodes;
    return c;
}

} // namespace apprentice
