#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "taskprior/errors.hpp"

namespace taskprior {

// A categorical search space: an ordered list of named dimensions, each with an
// ordered list of string-valued choices. Architectures and hyperparameters are
// flattened into one space; sampling treats dimensions as independent.

struct DesignDimension {
    std::string name;
    std::vector<std::string> choices;

    friend bool operator==(const DesignDimension&, const DesignDimension&) = default;
};

struct DesignSpace {
    std::vector<DesignDimension> dimensions;

    int size() const { return static_cast<int>(dimensions.size()); }

    int index_of(const std::string& name) const {
        for (std::size_t i = 0; i < dimensions.size(); ++i)
            if (dimensions[i].name == name) return static_cast<int>(i);
        return -1;
    }

    const DesignDimension& dimension(const std::string& name) const {
        const int i = index_of(name);
        if (i < 0) throw Error("no such dimension: " + name);
        return dimensions[i];
    }

    int choice_index(const std::string& dim, const std::string& value) const {
        const DesignDimension& d = dimension(dim);
        const auto it = std::find(d.choices.begin(), d.choices.end(), value);
        if (it == d.choices.end()) throw UnknownChoice(dim, value);
        return static_cast<int>(it - d.choices.begin());
    }

    void check() const {
        if (dimensions.empty()) throw Error("design space has no dimensions");
        for (const auto& d : dimensions) {
            if (d.choices.size() < 2)
                throw Error("dimension needs at least two choices: " + d.name);
            for (std::size_t i = 0; i < d.choices.size(); ++i)
                for (std::size_t j = i + 1; j < d.choices.size(); ++j)
                    if (d.choices[i] == d.choices[j])
                        throw Error("duplicate choice in dimension: " + d.name);
        }
        for (std::size_t i = 0; i < dimensions.size(); ++i)
            for (std::size_t j = i + 1; j < dimensions.size(); ++j)
                if (dimensions[i].name == dimensions[j].name)
                    throw Error("duplicate dimension name: " + dimensions[i].name);
    }

    friend bool operator==(const DesignSpace&, const DesignSpace&) = default;
};

// One point in a design space: dimension name -> chosen value. std::map keeps
// iteration (and serialization) order stable.
struct DesignConfig {
    std::map<std::string, std::string> assignment;

    const std::string& at(const std::string& dim) const {
        const auto it = assignment.find(dim);
        if (it == assignment.end()) throw MissingDimension(dim);
        return it->second;
    }

    friend bool operator==(const DesignConfig&, const DesignConfig&) = default;
};

// Succeeds iff the config assigns a legal choice to every dimension and has no
// stray keys. Throws MissingDimension or UnknownChoice naming the offender.
inline void validate_config(const DesignSpace& space, const DesignConfig& config) {
    for (const auto& d : space.dimensions) {
        const auto it = config.assignment.find(d.name);
        if (it == config.assignment.end()) throw MissingDimension(d.name);
        if (std::find(d.choices.begin(), d.choices.end(), it->second) == d.choices.end())
            throw UnknownChoice(d.name, it->second);
    }
    for (const auto& [dim, value] : config.assignment)
        if (space.index_of(dim) < 0) throw UnknownChoice(dim, value);
}

// The stock eleven-dimension GNN design space.
inline DesignSpace default_design_space() {
    return DesignSpace{{
        {"Convolution", {"GeneralConv", "GCNConv", "SAGEConv", "GINConv", "GATConv"}},
        {"Heads", {"1", "2", "4"}},
        {"Aggregation", {"Sum", "Mean", "Max"}},
        {"Activation", {"ReLU", "pReLU", "leaky_ReLU", "ELU"}},
        {"Hidden", {"64", "256"}},
        {"Connectivity", {"Stack", "Skip-Sum", "Skip-Concat"}},
        {"Pre-layers", {"1", "2"}},
        {"MP-layers", {"2", "4", "6", "8"}},
        {"Post-layers", {"2", "3"}},
        {"LR", {"0.1", "0.001"}},
        {"Epochs", {"200", "800", "1600"}},
    }};
}

// Same structure with Hidden/Epochs shrunk so one trial trains in well under a
// second on a laptop core.
inline DesignSpace desk_design_space() {
    DesignSpace space = default_design_space();
    space.dimensions[space.index_of("Hidden")].choices = {"8", "16"};
    space.dimensions[space.index_of("Epochs")].choices = {"30", "100"};
    return space;
}

inline nlohmann::json space_to_json(const DesignSpace& space) {
    nlohmann::json dims = nlohmann::json::array();
    for (const auto& d : space.dimensions)
        dims.push_back({{"name", d.name}, {"choices", d.choices}});
    return nlohmann::json{{"dimensions", dims}};
}

inline DesignSpace space_from_json(const nlohmann::json& j) {
    DesignSpace space;
    for (const auto& d : j.at("dimensions"))
        space.dimensions.push_back(
            {d.at("name").get<std::string>(), d.at("choices").get<std::vector<std::string>>()});
    space.check();
    return space;
}

inline void save_space(const DesignSpace& space, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << space_to_json(space).dump(2) << "\n";
}

inline DesignSpace load_space(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open for reading: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(e.what(), 1);
    }
    return space_from_json(j);
}

inline nlohmann::json config_to_json(const DesignConfig& config) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [dim, value] : config.assignment) j[dim] = value;
    return j;
}

inline DesignConfig config_from_json(const nlohmann::json& j) {
    DesignConfig config;
    for (auto it = j.begin(); it != j.end(); ++it)
        config.assignment[it.key()] = it.value().get<std::string>();
    return config;
}

}  // namespace taskprior
