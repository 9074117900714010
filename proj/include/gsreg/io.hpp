#pragma once
// File formats:
//  - images: binary PGM (P5), 16-bit big-endian samples,
//    sample = round(intensity * 65535);
//  - fields / masks / checkpoint tensors: GSMF container — magic "GSMF",
//    little-endian u32 version=1, u32 channels, u32 height, u32 width,
//    then C*H*W IEEE-754 32-bit little-endian floats, row-major,
//    channels outermost;
//  - checkpoints: text header (kind, architecture, optimizer state shape,
//    config echo) terminated by a DATA line, followed by one GSMF block
//    per listed tensor, flattened to 1 x 1 x numel.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gsreg/grid.hpp"
#include "gsreg/network.hpp"
#include "gsreg/surgery.hpp"

namespace gsreg {

void write_pgm(const std::filesystem::path& path, const Grid2& img);
Grid2 read_pgm(const std::filesystem::path& path);

// raw GSMF containers; each channel plane is one Grid2
void write_gsmf(const std::filesystem::path& path, const std::vector<Grid2>& channels);
std::vector<Grid2> read_gsmf(const std::filesystem::path& path);

void write_field(const std::filesystem::path& path, const DisplacementField& field);
DisplacementField read_field(const std::filesystem::path& path);

void write_mask(const std::filesystem::path& path, const LabelMask& mask);
LabelMask read_mask(const std::filesystem::path& path);

struct Checkpoint {
    RegistrationModel model;
    AdamOptimizer optimizer;
    std::vector<std::string> config_echo;
};

void save_checkpoint(const std::filesystem::path& path, const RegistrationModel& model,
                     const AdamOptimizer& optimizer,
                     const std::vector<std::string>& config_echo);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace gsreg
