#include "safeode/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

#include "safeode/io.hpp"

namespace safeode {

// Parameters are serialized as exact hexfloats so save/load round-trips
// bit for bit.
void save_checkpoint(const std::string& path, const ModelCheckpoint& ckpt) {
    nlohmann::ordered_json j;
    j["format_version"] = ckpt.format_version;
    j["widths"] = ckpt.spec.widths;
    j["gains"] = {hexfloat(ckpt.gains[0]), hexfloat(ckpt.gains[1]),
                  hexfloat(ckpt.gains[2])};
    j["theta_p"] = hexfloat(ckpt.theta_p);
    j["norm"] = {{"lidar", hexfloat(ckpt.norm_lidar)},
                 {"theta", hexfloat(ckpt.norm_theta)},
                 {"v", hexfloat(ckpt.norm_v)},
                 {"u1", hexfloat(ckpt.norm_u1)},
                 {"u2", hexfloat(ckpt.norm_u2)}};
    j["seed"] = ckpt.seed;
    j["train_config"] = ckpt.train_config;
    std::vector<std::string> p;
    p.reserve(ckpt.params.size());
    for (double x : ckpt.params) p.push_back(hexfloat(x));
    j["params"] = std::move(p);
    write_text_file(path, j.dump(2) + "\n");
}

ModelCheckpoint load_checkpoint(const std::string& path) {
    const auto j = nlohmann::ordered_json::parse(read_text_file(path));
    ModelCheckpoint c;
    c.format_version = j.at("format_version").get<int>();
    if (c.format_version != 1)
        throw std::runtime_error("checkpoint: unsupported format_version");
    c.spec.widths = j.at("widths").get<std::vector<int>>();
    c.gains[0] = parse_hexfloat(j.at("gains").at(0).get<std::string>());
    c.gains[1] = parse_hexfloat(j.at("gains").at(1).get<std::string>());
    c.gains[2] = parse_hexfloat(j.at("gains").at(2).get<std::string>());
    c.theta_p = parse_hexfloat(j.at("theta_p").get<std::string>());
    c.norm_lidar = parse_hexfloat(j.at("norm").at("lidar").get<std::string>());
    c.norm_theta = parse_hexfloat(j.at("norm").at("theta").get<std::string>());
    c.norm_v = parse_hexfloat(j.at("norm").at("v").get<std::string>());
    c.norm_u1 = parse_hexfloat(j.at("norm").at("u1").get<std::string>());
    c.norm_u2 = parse_hexfloat(j.at("norm").at("u2").get<std::string>());
    c.seed = j.at("seed").get<std::uint64_t>();
    c.train_config = j.at("train_config");
    const auto& arr = j.at("params");
    c.params.reserve(arr.size());
    for (const auto& s : arr) c.params.push_back(parse_hexfloat(s.get<std::string>()));
    if (static_cast<std::ptrdiff_t>(c.params.size()) !=
        neuralnet::param_count(c.spec))
        throw std::runtime_error("checkpoint: parameter count mismatch");
    return c;
}

}  // namespace safeode
