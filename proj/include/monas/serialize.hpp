#pragma once

// Architecture file format: one JSON document holding the graph and,
// optionally, its weights as base64-encoded little-endian 64-bit floats keyed
// by node id. The exact schema is documented in docs/formats.md; format_version
// gates parsing. Parsing is atomic: any error throws and nothing is returned.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "monas/graph.hpp"
#include "monas/weights.hpp"

namespace monas {

inline constexpr int kArchFormatVersion = 1;

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// base64 (standard alphabet, padded)
// ---------------------------------------------------------------------------

namespace detail {

inline constexpr char kB64Alphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

inline std::string base64_encode(const std::uint8_t* data, std::size_t len) {
    std::string out;
    out.reserve((len + 2) / 3 * 4);
    for (std::size_t i = 0; i < len; i += 3) {
        std::uint32_t chunk = static_cast<std::uint32_t>(data[i]) << 16;
        if (i + 1 < len) chunk |= static_cast<std::uint32_t>(data[i + 1]) << 8;
        if (i + 2 < len) chunk |= data[i + 2];
        out.push_back(kB64Alphabet[(chunk >> 18) & 63]);
        out.push_back(kB64Alphabet[(chunk >> 12) & 63]);
        out.push_back(i + 1 < len ? kB64Alphabet[(chunk >> 6) & 63] : '=');
        out.push_back(i + 2 < len ? kB64Alphabet[chunk & 63] : '=');
    }
    return out;
}

inline std::vector<std::uint8_t> base64_decode(const std::string& text) {
    auto value_of = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    if (text.size() % 4 != 0) throw Error("parse", "base64 payload length not a multiple of 4");
    std::vector<std::uint8_t> out;
    out.reserve(text.size() / 4 * 3);
    for (std::size_t i = 0; i < text.size(); i += 4) {
        int vals[4];
        int pad = 0;
        for (int j = 0; j < 4; ++j) {
            const char c = text[i + j];
            if (c == '=') {
                vals[j] = 0;
                ++pad;
            } else {
                vals[j] = value_of(c);
                if (vals[j] < 0 || pad > 0)
                    throw Error("parse", "invalid base64 character at offset " +
                                             std::to_string(i + j));
            }
        }
        const std::uint32_t chunk = (static_cast<std::uint32_t>(vals[0]) << 18) |
                                    (static_cast<std::uint32_t>(vals[1]) << 12) |
                                    (static_cast<std::uint32_t>(vals[2]) << 6) |
                                    static_cast<std::uint32_t>(vals[3]);
        out.push_back((chunk >> 16) & 0xff);
        if (pad < 2) out.push_back((chunk >> 8) & 0xff);
        if (pad < 1) out.push_back(chunk & 0xff);
    }
    return out;
}

inline std::string encode_f64le(const std::vector<double>& values) {
    std::vector<std::uint8_t> bytes(values.size() * 8);
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::uint64_t bits;
        std::memcpy(&bits, &values[i], 8);
        for (int b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<std::uint8_t>(bits >> (8 * b));
    }
    return base64_encode(bytes.data(), bytes.size());
}

inline std::vector<double> decode_f64le(const std::string& text) {
    const auto bytes = base64_decode(text);
    if (bytes.size() % 8 != 0) throw Error("parse", "f64 payload size not a multiple of 8");
    std::vector<double> values(bytes.size() / 8);
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[i * 8 + b]) << (8 * b);
        std::memcpy(&values[i], &bits, 8);
    }
    return values;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Layer kind <-> JSON
// ---------------------------------------------------------------------------

inline json kind_to_json(const LayerKind& kind) {
    json j;
    j["kind"] = kind_name(kind);
    if (const auto* c = std::get_if<Conv2d>(&kind)) {
        j["kernel"] = c->kernel;
        j["stride"] = c->stride;
        j["out_channels"] = c->out_channels;
        j["has_bias"] = c->has_bias;
    } else if (const auto* s = std::get_if<SeparableConv2d>(&kind)) {
        j["kernel"] = s->kernel;
        j["stride"] = s->stride;
        j["out_channels"] = s->out_channels;
        j["has_bias"] = s->has_bias;
    } else if (const auto* d = std::get_if<Dense>(&kind)) {
        j["out_units"] = d->out_units;
        j["has_bias"] = d->has_bias;
    } else if (const auto* p = std::get_if<MaxPool>(&kind)) {
        j["kernel"] = p->kernel;
        j["stride"] = p->stride;
    }
    return j;
}

inline LayerKind kind_from_json(const json& j) {
    const std::string name = j.at("kind").get<std::string>();
    if (name == "input") return InputLayer{};
    if (name == "conv2d")
        return Conv2d{j.at("kernel").get<int>(), j.at("stride").get<int>(),
                      j.at("out_channels").get<int>(), j.at("has_bias").get<bool>()};
    if (name == "separable_conv2d")
        return SeparableConv2d{j.at("kernel").get<int>(), j.at("stride").get<int>(),
                               j.at("out_channels").get<int>(), j.at("has_bias").get<bool>()};
    if (name == "dense") return Dense{j.at("out_units").get<int>(), j.at("has_bias").get<bool>()};
    if (name == "batch_norm") return BatchNorm{};
    if (name == "relu") return Relu{};
    if (name == "max_pool") return MaxPool{j.at("kernel").get<int>(), j.at("stride").get<int>()};
    if (name == "global_avg_pool") return GlobalAvgPool{};
    if (name == "softmax_head") return SoftmaxHead{};
    if (name == "add_join") return AddJoin{};
    if (name == "concat_join") return ConcatJoin{};
    throw Error("parse", "unknown layer kind '" + name + "'");
}

// ---------------------------------------------------------------------------
// Architecture document
// ---------------------------------------------------------------------------

inline json architecture_to_json(const ArchGraph& graph, const WeightStore* weights = nullptr) {
    json doc;
    doc["format_version"] = kArchFormatVersion;
    doc["input_spec"] = {{"channels", graph.input_spec.channels},
                         {"height", graph.input_spec.height},
                         {"width", graph.input_spec.width}};
    doc["num_classes"] = graph.num_classes;
    doc["nodes"] = json::array();
    doc["cell_tags"] = json::array();
    for (const auto& n : graph.nodes) {
        json nj = kind_to_json(n.kind);
        nj["id"] = n.id;
        doc["nodes"].push_back(std::move(nj));
        if (n.cell)
            doc["cell_tags"].push_back(
                {{"node", n.id}, {"instance", n.cell->instance}, {"local", n.cell->local}});
    }
    doc["edges"] = json::array();
    for (const auto& e : graph.edges)
        doc["edges"].push_back({{"src", e.src}, {"dst", e.dst}, {"port", e.port}});
    if (weights) {
        json w = json::object();
        for (const auto& [id, params] : weights->nodes) {
            json pj = json::object();
            for (const auto& [name, tensor] : params)
                pj[name] = {{"shape", tensor.shape()},
                            {"dtype", "f64le"},
                            {"data", detail::encode_f64le(tensor.vec())}};
            w[std::to_string(id)] = std::move(pj);
        }
        doc["weights"] = std::move(w);
    }
    return doc;
}

struct ParsedArchitecture {
    ArchGraph graph;
    std::optional<WeightStore> weights;
};

inline ParsedArchitecture architecture_from_json(const json& doc) {
    if (!doc.is_object()) throw Error("parse", "architecture document must be a JSON object");
    const int version = doc.at("format_version").get<int>();
    if (version != kArchFormatVersion)
        throw Error("version_mismatch", "architecture format_version " + std::to_string(version) +
                                            " unsupported (expected " +
                                            std::to_string(kArchFormatVersion) + ")");
    ParsedArchitecture result;
    ArchGraph& g = result.graph;
    const json& spec = doc.at("input_spec");
    g.input_spec = {spec.at("channels").get<int>(), spec.at("height").get<int>(),
                    spec.at("width").get<int>()};
    g.num_classes = doc.at("num_classes").get<int>();
    for (const json& nj : doc.at("nodes"))
        g.nodes.push_back({nj.at("id").get<int>(), kind_from_json(nj), std::nullopt});
    for (const json& tj : doc.at("cell_tags")) {
        GraphNode* n = g.find_node(tj.at("node").get<int>());
        if (!n) throw Error("parse", "cell tag references missing node");
        n->cell = CellTag{tj.at("instance").get<int>(), tj.at("local").get<int>()};
    }
    for (const json& ej : doc.at("edges"))
        g.edges.push_back(
            {ej.at("src").get<int>(), ej.at("dst").get<int>(), ej.at("port").get<int>()});

    if (doc.contains("weights")) {
        WeightStore store;
        for (const auto& [key, pj] : doc.at("weights").items()) {
            const int id = std::stoi(key);
            if (!g.find_node(id)) throw Error("parse", "weights reference missing node " + key);
            ParamMap params;
            for (const auto& [name, tj] : pj.items()) {
                if (tj.at("dtype").get<std::string>() != "f64le")
                    throw Error("parse", "unsupported dtype for " + key + "/" + name);
                Shape shape = tj.at("shape").get<Shape>();
                std::vector<double> data = detail::decode_f64le(tj.at("data").get<std::string>());
                params.emplace(name, Tensor(std::move(shape), std::move(data)));
            }
            store.nodes.emplace(id, std::move(params));
        }
        result.weights = std::move(store);
    }
    return result;
}

inline std::string serialize_architecture(const ArchGraph& graph,
                                          const WeightStore* weights = nullptr) {
    return architecture_to_json(graph, weights).dump(2);
}

inline ParsedArchitecture parse_architecture(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error("parse", std::string("architecture file: ") + e.what());
    }
    try {
        return architecture_from_json(doc);
    } catch (const json::exception& e) {
        throw Error("parse", std::string("architecture schema: ") + e.what());
    }
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("io", "cannot open '" + path + "' for writing");
    out << text;
    if (!out) throw Error("io", "write to '" + path + "' failed");
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("io", "cannot open '" + path + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace monas
