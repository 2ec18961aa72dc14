#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace rvq {

/// Minimal JSON Schema checker covering the subset the shipped schemas use:
/// type, required, properties, additionalProperties (boolean), items (single
/// schema), enum, minimum/maximum, minItems. Returns human-readable
/// violations; empty means the document conforms.
inline void validate_schema_node(const nlohmann::json& schema, const nlohmann::json& value,
                                 const std::string& where, std::vector<std::string>& errors) {
    using nlohmann::json;
    if (schema.contains("type")) {
        auto matches = [&](const std::string& type) {
            return (type == "object" && value.is_object()) ||
                   (type == "array" && value.is_array()) ||
                   (type == "string" && value.is_string()) ||
                   (type == "number" && value.is_number()) ||
                   (type == "integer" && value.is_number_integer()) ||
                   (type == "boolean" && value.is_boolean()) || (type == "null" && value.is_null());
        };
        const json& t = schema.at("type");
        bool ok = false;
        std::string shown;
        if (t.is_array()) {
            for (const auto& alt : t) {
                ok = ok || matches(alt.get<std::string>());
                shown += (shown.empty() ? "" : "|") + alt.get<std::string>();
            }
        } else {
            shown = t.get<std::string>();
            ok = matches(shown);
        }
        if (!ok) {
            errors.push_back(where + ": expected " + shown + ", got " +
                             std::string(value.type_name()));
            return;
        }
    }
    if (schema.contains("enum")) {
        bool found = false;
        for (const auto& v : schema.at("enum"))
            if (v == value) found = true;
        if (!found) errors.push_back(where + ": value not in enum");
    }
    if (value.is_number()) {
        double x = value.get<double>();
        if (schema.contains("minimum") && x < schema.at("minimum").get<double>())
            errors.push_back(where + ": below minimum");
        if (schema.contains("maximum") && x > schema.at("maximum").get<double>())
            errors.push_back(where + ": above maximum");
    }
    if (value.is_object()) {
        if (schema.contains("required"))
            for (const auto& key : schema.at("required")) {
                const std::string k = key.get<std::string>();
                if (!value.contains(k)) errors.push_back(where + ": missing required key '" + k + "'");
            }
        const json props = schema.value("properties", json::object());
        for (auto it = value.begin(); it != value.end(); ++it) {
            if (props.contains(it.key())) {
                validate_schema_node(props.at(it.key()), it.value(), where + "." + it.key(),
                                     errors);
            } else if (schema.contains("additionalProperties") &&
                       schema.at("additionalProperties").is_boolean() &&
                       !schema.at("additionalProperties").get<bool>()) {
                errors.push_back(where + ": unexpected key '" + it.key() + "'");
            }
        }
    }
    if (value.is_array()) {
        if (schema.contains("minItems") && value.size() < schema.at("minItems").get<std::size_t>())
            errors.push_back(where + ": fewer than minItems elements");
        if (schema.contains("items")) {
            std::size_t i = 0;
            for (const auto& item : value) {
                validate_schema_node(schema.at("items"), item, where + "[" + std::to_string(i) + "]",
                                     errors);
                ++i;
            }
        }
    }
}

inline std::vector<std::string> validate_against_schema(const nlohmann::json& schema,
                                                        const nlohmann::json& value) {
    std::vector<std::string> errors;
    validate_schema_node(schema, value, "$", errors);
    return errors;
}

} // namespace rvq
