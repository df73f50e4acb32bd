#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "rst/model.hpp"

namespace rst {

// Binary model checkpoint: magic, scalar width, JSON config header, then
// raw little-endian tensors in visit() order. Round-trips bit-exactly for
// a given scalar type.
namespace ckpt {

inline constexpr char kMagic[8] = {'R', 'S', 'T', 'C', 'K', 'P', 'T', '1'};

inline nlohmann::json config_to_json(const EncoderConfig& c) {
    return {{"vocab_size", c.vocab_size},   {"hidden_dim", c.hidden_dim},
            {"num_layers", c.num_layers},   {"num_heads", c.num_heads},
            {"max_len", c.max_len},         {"dropout_rate", c.dropout_rate},
            {"mask_token_id", c.mask_token_id}, {"sep_token_id", c.sep_token_id},
            {"pad_token_id", c.pad_token_id}};
}

inline EncoderConfig config_from_json(const nlohmann::json& j) {
    EncoderConfig c;
    c.vocab_size = j.at("vocab_size").get<int>();
    c.hidden_dim = j.at("hidden_dim").get<int>();
    c.num_layers = j.at("num_layers").get<int>();
    c.num_heads = j.at("num_heads").get<int>();
    c.max_len = j.at("max_len").get<int>();
    c.dropout_rate = j.at("dropout_rate").get<double>();
    c.mask_token_id = j.at("mask_token_id").get<int>();
    c.sep_token_id = j.at("sep_token_id").get<int>();
    c.pad_token_id = j.at("pad_token_id").get<int>();
    return c;
}

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw IoError("checkpoint: unexpected end of file");
    return v;
}

}  // namespace ckpt

template <typename Real>
void save_model(const MultiTaskModel<Real>& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(ckpt::kMagic, sizeof(ckpt::kMagic));
    ckpt::write_pod<std::uint32_t>(out, sizeof(Real));
    nlohmann::json header = ckpt::config_to_json(model.encoder.cfg);
    header["num_classes"] = model.num_classes;
    const std::string hs = header.dump();
    ckpt::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(hs.size()));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    model.visit([&](const std::string& name, const Mat<Real>& m) {
        ckpt::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        ckpt::write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
        ckpt::write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
        out.write(reinterpret_cast<const char*>(m.data()),
                  static_cast<std::streamsize>(sizeof(Real) * m.size()));
    });
    if (!out) throw IoError("failed writing checkpoint " + path.string());
}

template <typename Real>
MultiTaskModel<Real> load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, ckpt::kMagic, sizeof(magic)) != 0)
        throw ParseError("not a model checkpoint: " + path.string());
    const auto width = ckpt::read_pod<std::uint32_t>(in);
    if (width != sizeof(Real))
        throw ParseError("checkpoint scalar width " + std::to_string(width) +
                         " does not match build width " + std::to_string(sizeof(Real)));
    const auto hlen = ckpt::read_pod<std::uint32_t>(in);
    std::string hs(hlen, '\0');
    in.read(hs.data(), hlen);
    if (!in) throw IoError("checkpoint: truncated header");
    nlohmann::json header = nlohmann::json::parse(hs);
    const EncoderConfig cfg = ckpt::config_from_json(header);
    MultiTaskModel<Real> model = new_model<Real>(cfg, header.at("num_classes").get<int>(), 0);
    model.visit([&](const std::string& name, Mat<Real>& m) {
        const auto nlen = ckpt::read_pod<std::uint32_t>(in);
        std::string n(nlen, '\0');
        in.read(n.data(), nlen);
        if (n != name)
            throw ParseError("checkpoint tensor order mismatch: expected " + name + ", got " +
                             n);
        const auto rows = ckpt::read_pod<std::uint64_t>(in);
        const auto cols = ckpt::read_pod<std::uint64_t>(in);
        if (rows != static_cast<std::uint64_t>(m.rows()) ||
            cols != static_cast<std::uint64_t>(m.cols()))
            throw ParseError("checkpoint tensor " + name + " has unexpected shape");
        in.read(reinterpret_cast<char*>(m.data()),
                static_cast<std::streamsize>(sizeof(Real) * m.size()));
        if (!in) throw IoError("checkpoint: truncated tensor " + name);
    });
    return model;
}

}  // namespace rst
