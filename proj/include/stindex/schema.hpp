#pragma once

#include <algorithm>
#include <filesystem>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "stindex/error.hpp"
#include "stindex/json_io.hpp"
#include "stindex/text.hpp"

namespace stindex {

enum class DimensionKind { normalized_temporal, geocoded_spatial, categorical, structured };

enum class AttributeKind { text, number, category };

inline std::string to_string(DimensionKind k) {
    switch (k) {
        case DimensionKind::normalized_temporal: return "normalized_temporal";
        case DimensionKind::geocoded_spatial: return "geocoded_spatial";
        case DimensionKind::categorical: return "categorical";
        case DimensionKind::structured: return "structured";
    }
    return "?";
}

inline std::string to_string(AttributeKind k) {
    switch (k) {
        case AttributeKind::text: return "text";
        case AttributeKind::number: return "number";
        case AttributeKind::category: return "category";
    }
    return "?";
}

struct AttributeSpec {
    std::string name;
    AttributeKind kind = AttributeKind::text;

    bool operator==(const AttributeSpec&) const = default;
};

struct DimensionSchema {
    std::string name;
    DimensionKind kind = DimensionKind::categorical;
    std::string description;
    std::optional<std::vector<std::string>> vocabulary;
    std::optional<std::vector<std::string>> hierarchy;
    std::optional<std::vector<AttributeSpec>> attributes;
    bool required = false;

    bool operator==(const DimensionSchema&) const = default;

    /// Vocabulary label matching `label` case-insensitively, in vocabulary case.
    std::optional<std::string> canonical_label(std::string_view label) const {
        if (!vocabulary) return std::nullopt;
        auto folded = text::to_lower(text::trim_view(label));
        for (const auto& v : *vocabulary) {
            if (text::to_lower(v) == folded) return v;
        }
        return std::nullopt;
    }
};

/// Immutable once parsed; share freely between workers.
struct SchemaSet {
    std::vector<DimensionSchema> dimensions;
    std::string version = "1";

    bool operator==(const SchemaSet&) const = default;

    const DimensionSchema* find(std::string_view name) const {
        for (const auto& d : dimensions) {
            if (d.name == name) return &d;
        }
        return nullptr;
    }

    const DimensionSchema& anchor(DimensionKind kind) const {
        for (const auto& d : dimensions) {
            if (d.kind == kind) return d;
        }
        throw SchemaViolation("missing " + to_string(kind) + " anchor");
    }

    const DimensionSchema& temporal() const { return anchor(DimensionKind::normalized_temporal); }
    const DimensionSchema& spatial() const { return anchor(DimensionKind::geocoded_spatial); }
};

enum class ConfigFormat { json, yaml };

namespace detail {

inline std::optional<DimensionKind> parse_dimension_kind(std::string_view s) {
    if (s == "normalized_temporal") return DimensionKind::normalized_temporal;
    if (s == "geocoded_spatial") return DimensionKind::geocoded_spatial;
    if (s == "categorical") return DimensionKind::categorical;
    if (s == "structured") return DimensionKind::structured;
    return std::nullopt;
}

inline std::optional<AttributeKind> parse_attribute_kind(std::string_view s) {
    if (s == "text") return AttributeKind::text;
    if (s == "number") return AttributeKind::number;
    if (s == "category") return AttributeKind::category;
    return std::nullopt;
}

inline std::string normalize_dimension_name(std::string_view raw) {
    std::string out;
    for (char c : text::trim_view(raw)) {
        if (c == ' ' || c == '-') out.push_back('_');
        else out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    return out;
}

inline bool valid_identifier(std::string_view name) {
    if (name.empty() || name[0] < 'a' || name[0] > 'z') return false;
    return std::all_of(name.begin(), name.end(), [](char c) {
        return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
    });
}

inline json yaml_to_json(const YAML::Node& node) {
    switch (node.Type()) {
        case YAML::NodeType::Null:
        case YAML::NodeType::Undefined:
            return nullptr;
        case YAML::NodeType::Scalar: {
            const auto& s = node.Scalar();
            if (node.Tag() == "!") return s;  // quoted scalar stays a string
            if (s == "true") return true;
            if (s == "false") return false;
            return s;
        }
        case YAML::NodeType::Sequence: {
            json arr = json::array();
            for (const auto& item : node) arr.push_back(yaml_to_json(item));
            return arr;
        }
        case YAML::NodeType::Map: {
            json obj = json::object();
            for (const auto& kv : node) obj[kv.first.as<std::string>()] = yaml_to_json(kv.second);
            return obj;
        }
    }
    return nullptr;
}

inline std::vector<std::string> string_list(const json& j, const std::string& dim,
                                            const char* field) {
    if (!j.is_array()) throw SchemaViolation("dimension '" + dim + "': " + field + " must be a list");
    std::vector<std::string> out;
    for (const auto& item : j) {
        if (!item.is_string())
            throw SchemaViolation("dimension '" + dim + "': " + field + " entries must be text");
        out.push_back(text::trim(item.get<std::string>()));
    }
    return out;
}

inline bool has_field(const json& obj, const char* key) {
    return obj.contains(key) && !obj.at(key).is_null();
}

inline DimensionSchema dimension_from_json(const json& j, std::size_t position) {
    if (!j.is_object())
        throw SchemaViolation("dimension #" + std::to_string(position + 1) + " must be a mapping");
    DimensionSchema d;
    if (!has_field(j, "name") || !j.at("name").is_string())
        throw SchemaViolation("dimension #" + std::to_string(position + 1) + " has no name");
    d.name = normalize_dimension_name(j.at("name").get<std::string>());
    if (d.name.empty())
        throw SchemaViolation("dimension #" + std::to_string(position + 1) + " has an empty name");
    if (!valid_identifier(d.name))
        throw SchemaViolation("dimension '" + d.name + "': name must match [a-z][a-z0-9_]*");

    if (!has_field(j, "kind") || !j.at("kind").is_string())
        throw SchemaViolation("dimension '" + d.name + "' has no kind");
    auto kind_text = j.at("kind").get<std::string>();
    auto kind = parse_dimension_kind(kind_text);
    if (!kind) throw SchemaViolation("dimension '" + d.name + "': unknown kind '" + kind_text + "'");
    d.kind = *kind;

    if (has_field(j, "description")) {
        if (!j.at("description").is_string())
            throw SchemaViolation("dimension '" + d.name + "': description must be text");
        d.description = j.at("description").get<std::string>();
    }
    if (has_field(j, "required")) {
        const auto& r = j.at("required");
        if (r.is_boolean()) d.required = r.get<bool>();
        else throw SchemaViolation("dimension '" + d.name + "': required must be true or false");
    }
    if (has_field(j, "vocabulary")) d.vocabulary = string_list(j.at("vocabulary"), d.name, "vocabulary");
    if (has_field(j, "hierarchy")) d.hierarchy = string_list(j.at("hierarchy"), d.name, "hierarchy");
    if (has_field(j, "attributes")) {
        const auto& attrs = j.at("attributes");
        if (!attrs.is_array())
            throw SchemaViolation("dimension '" + d.name + "': attributes must be a list");
        std::vector<AttributeSpec> specs;
        for (const auto& a : attrs) {
            if (!a.is_object() || !has_field(a, "name") || !a.at("name").is_string())
                throw SchemaViolation("dimension '" + d.name + "': attribute without a name");
            AttributeSpec spec;
            spec.name = normalize_dimension_name(a.at("name").get<std::string>());
            auto k = has_field(a, "kind") && a.at("kind").is_string()
                         ? parse_attribute_kind(a.at("kind").get<std::string>())
                         : std::optional<AttributeKind>(AttributeKind::text);
            if (!k)
                throw SchemaViolation("dimension '" + d.name + "': attribute '" + spec.name +
                                      "' has unknown kind");
            spec.kind = *k;
            specs.push_back(std::move(spec));
        }
        d.attributes = std::move(specs);
    }
    return d;
}

}  // namespace detail

/// Throws SchemaViolation naming the first broken invariant.
inline void validate_schema(const SchemaSet& schema) {
    std::set<std::string> seen;
    for (const auto& d : schema.dimensions) {
        if (d.name.empty()) throw SchemaViolation("dimension with empty name");
        if (!detail::valid_identifier(d.name))
            throw SchemaViolation("dimension '" + d.name + "': name must match [a-z][a-z0-9_]*");
        if (!seen.insert(d.name).second)
            throw SchemaViolation("duplicate dimension name '" + d.name + "'");

        const bool categorical = d.kind == DimensionKind::categorical;
        if (categorical && !d.vocabulary)
            throw SchemaViolation("categorical dimension '" + d.name + "' missing vocabulary");
        if (!categorical && d.vocabulary)
            throw SchemaViolation("dimension '" + d.name + "': vocabulary is only allowed on categorical dimensions");
        if (d.vocabulary) {
            std::set<std::string> labels;
            for (const auto& label : *d.vocabulary) {
                if (label.empty())
                    throw SchemaViolation("categorical dimension '" + d.name + "' has an empty label");
                if (!labels.insert(text::to_lower(label)).second)
                    throw SchemaViolation("categorical dimension '" + d.name + "' repeats label '" + label + "'");
            }
            if (labels.empty())
                throw SchemaViolation("categorical dimension '" + d.name + "' has an empty vocabulary");
        }

        const bool structured = d.kind == DimensionKind::structured;
        if (structured && !d.attributes)
            throw SchemaViolation("structured dimension '" + d.name + "' missing attributes");
        if (!structured && d.attributes)
            throw SchemaViolation("dimension '" + d.name + "': attributes are only allowed on structured dimensions");
        if (d.attributes) {
            if (d.attributes->empty())
                throw SchemaViolation("structured dimension '" + d.name + "' has no attributes");
            std::set<std::string> names;
            for (const auto& a : *d.attributes) {
                if (!detail::valid_identifier(a.name))
                    throw SchemaViolation("structured dimension '" + d.name + "': bad attribute name '" + a.name + "'");
                if (!names.insert(a.name).second)
                    throw SchemaViolation("structured dimension '" + d.name + "' repeats attribute '" + a.name + "'");
            }
        }

        if (d.hierarchy) {
            std::set<std::string> levels(d.hierarchy->begin(), d.hierarchy->end());
            if (levels.size() != d.hierarchy->size() || levels.size() < 2 || levels.count(""))
                throw SchemaViolation("dimension '" + d.name + "': hierarchy needs at least two distinct level names");
        }
    }

    for (auto kind : {DimensionKind::normalized_temporal, DimensionKind::geocoded_spatial}) {
        std::vector<std::string> names;
        for (const auto& d : schema.dimensions) {
            if (d.kind == kind) names.push_back(d.name);
        }
        if (names.empty()) throw SchemaViolation("missing " + to_string(kind) + " anchor");
        if (names.size() > 1)
            throw SchemaViolation("more than one " + to_string(kind) + " dimension: '" + names[0] +
                                  "' and '" + names[1] + "'");
    }
}

/// Builds a schema from an already-parsed config document.
inline SchemaSet schema_from_json(const json& doc) {
    if (!doc.is_object()) throw SchemaViolation("schema config must be a mapping with a 'dimensions' list");
    if (!doc.contains("dimensions") || !doc.at("dimensions").is_array())
        throw SchemaViolation("schema config has no 'dimensions' list");
    SchemaSet schema;
    if (detail::has_field(doc, "version")) {
        const auto& v = doc.at("version");
        schema.version = v.is_string() ? v.get<std::string>() : v.dump();
    }
    const auto& dims = doc.at("dimensions");
    for (std::size_t i = 0; i < dims.size(); ++i) {
        schema.dimensions.push_back(detail::dimension_from_json(dims[i], i));
    }
    validate_schema(schema);
    return schema;
}

inline SchemaSet parse_schema(std::string_view config_text, ConfigFormat format = ConfigFormat::json) {
    json doc;
    if (format == ConfigFormat::json) {
        try {
            doc = json::parse(config_text);
        } catch (const json::parse_error& e) {
            throw SyntaxError(std::string("malformed JSON schema config: ") + e.what());
        }
    } else {
        try {
            doc = detail::yaml_to_json(YAML::Load(std::string(config_text)));
        } catch (const YAML::Exception& e) {
            throw SyntaxError(std::string("malformed YAML schema config: ") + e.what());
        }
    }
    return schema_from_json(doc);
}

inline ConfigFormat config_format_for(const std::filesystem::path& path) {
    auto ext = text::to_lower(path.extension().string());
    if (ext == ".json") return ConfigFormat::json;
    if (ext == ".yaml" || ext == ".yml") return ConfigFormat::yaml;
    throw UnsupportedFormat("schema config must be .json, .yaml or .yml: " + path.string());
}

inline SchemaSet load_schema_file(const std::filesystem::path& path) {
    auto format = config_format_for(path);
    return parse_schema(text::read_file(path), format);
}

inline json schema_to_json(const SchemaSet& schema) {
    json dims = json::array();
    for (const auto& d : schema.dimensions) {
        json j;
        j["name"] = d.name;
        j["kind"] = to_string(d.kind);
        if (!d.description.empty()) j["description"] = d.description;
        if (d.vocabulary) j["vocabulary"] = *d.vocabulary;
        if (d.hierarchy) j["hierarchy"] = *d.hierarchy;
        if (d.attributes) {
            json attrs = json::array();
            for (const auto& a : *d.attributes) attrs.push_back({{"name", a.name}, {"kind", to_string(a.kind)}});
            j["attributes"] = attrs;
        }
        if (d.required) j["required"] = true;
        dims.push_back(j);
    }
    return json{{"version", schema.version}, {"dimensions", dims}};
}

inline std::string serialize_schema(const SchemaSet& schema, ConfigFormat format = ConfigFormat::json) {
    auto j = schema_to_json(schema);
    if (format == ConfigFormat::json) return j.dump(2) + "\n";

    YAML::Emitter out;
    out << YAML::BeginMap;
    out << YAML::Key << "version" << YAML::Value << YAML::DoubleQuoted << schema.version;
    out << YAML::Key << "dimensions" << YAML::Value << YAML::BeginSeq;
    for (const auto& d : schema.dimensions) {
        out << YAML::BeginMap;
        out << YAML::Key << "name" << YAML::Value << d.name;
        out << YAML::Key << "kind" << YAML::Value << to_string(d.kind);
        if (!d.description.empty())
            out << YAML::Key << "description" << YAML::Value << YAML::DoubleQuoted << d.description;
        auto emit_list = [&out](const char* key, const std::vector<std::string>& items) {
            out << YAML::Key << key << YAML::Value << YAML::BeginSeq;
            for (const auto& item : items) out << YAML::DoubleQuoted << item;
            out << YAML::EndSeq;
        };
        if (d.vocabulary) emit_list("vocabulary", *d.vocabulary);
        if (d.hierarchy) emit_list("hierarchy", *d.hierarchy);
        if (d.attributes) {
            out << YAML::Key << "attributes" << YAML::Value << YAML::BeginSeq;
            for (const auto& a : *d.attributes) {
                out << YAML::BeginMap << YAML::Key << "name" << YAML::Value << a.name << YAML::Key
                    << "kind" << YAML::Value << to_string(a.kind) << YAML::EndMap;
            }
            out << YAML::EndSeq;
        }
        if (d.required) out << YAML::Key << "required" << YAML::Value << true;
        out << YAML::EndMap;
    }
    out << YAML::EndSeq << YAML::EndMap;
    return std::string(out.c_str()) + "\n";
}

/// Two-dimension anchor schema used when no config is supplied.
inline SchemaSet default_schema() {
    SchemaSet schema;
    schema.version = "default";
    DimensionSchema when;
    when.name = "temporal";
    when.kind = DimensionKind::normalized_temporal;
    when.description = "Dates, times and date ranges, including relative ones such as \"the next day\".";
    DimensionSchema where;
    where.name = "spatial";
    where.kind = DimensionKind::geocoded_spatial;
    where.description = "Named places: countries, regions, cities, suburbs and venues with an address.";
    where.hierarchy = std::vector<std::string>{"country", "admin", "locality"};
    schema.dimensions = {when, where};
    return schema;
}

/// Prompt fragment describing every dimension's output contract. Pure and
/// byte-stable for a given schema.
inline std::string render_schema_instructions(const SchemaSet& schema) {
    std::ostringstream out;
    out << "Dimensions to extract (" << schema.dimensions.size()
        << "). Return one JSON array per dimension, keyed by the dimension name.\n";
    for (const auto& d : schema.dimensions) {
        out << "\n- " << d.name;
        if (d.required) out << " (required)";
        out << ": " << (d.description.empty() ? "no description" : d.description) << "\n";
        switch (d.kind) {
            case DimensionKind::normalized_temporal:
                out << "  Each item: {\"text\", \"span\", \"value\", \"confidence\"}. \"value\" is an ISO 8601 "
                       "string at the precision the text supports (YYYY, YYYY-MM, YYYY-MM-DD, "
                       "YYYY-MM-DDThh:mm); a range is \"start/end\".\n";
                break;
            case DimensionKind::geocoded_spatial:
                out << "  Each item: {\"text\", \"span\", \"name\", \"qualifier\", \"confidence\"}. \"name\" is "
                       "the place name; \"qualifier\" is an optional enclosing region or country that "
                       "disambiguates it.\n";
                if (d.hierarchy) {
                    out << "  Levels, coarse to fine: ";
                    for (std::size_t i = 0; i < d.hierarchy->size(); ++i)
                        out << (i ? " > " : "") << (*d.hierarchy)[i];
                    out << "\n";
                }
                break;
            case DimensionKind::categorical:
                out << "  Each item: {\"text\", \"span\", \"label\", \"confidence\"}. \"label\" is exactly one "
                       "of: ";
                for (std::size_t i = 0; i < d.vocabulary->size(); ++i)
                    out << (i ? ", " : "") << '"' << (*d.vocabulary)[i] << '"';
                out << "\n";
                break;
            case DimensionKind::structured:
                out << "  Each item: {\"text\", \"span\", \"attributes\", \"confidence\"}. \"attributes\" is "
                       "an object with keys: ";
                for (std::size_t i = 0; i < d.attributes->size(); ++i) {
                    const auto& a = (*d.attributes)[i];
                    out << (i ? ", " : "") << a.name << " (" << to_string(a.kind) << ")";
                }
                out << "\n";
                break;
        }
    }
    return out.str();
}

}  // namespace stindex
