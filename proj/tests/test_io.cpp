#include <gtest/gtest.h>

#include <filesystem>
#include <string>

#include "equicaps/io.hpp"

using namespace equicaps;
namespace fs = std::filesystem;

TEST(Pgm, AsciiAndBinary) {
  const ImageGrid a = parse_pgm("P2\n# comment\n2 2\n255\n0 255\n51 102\n");
  EXPECT_EQ(a.height(), 2u);
  EXPECT_DOUBLE_EQ(a.at(0, 1), 1.0);
  EXPECT_DOUBLE_EQ(a.at(1, 0), 0.2);
  const std::string bin = format_pgm(a);
  const ImageGrid b = parse_pgm(bin);
  EXPECT_EQ(b.pixels(), a.pixels());
  EXPECT_THROW(parse_pgm("P3\n1 1\n255\n0\n"), IoError);
  EXPECT_THROW(parse_pgm("P2\n1 1\n65535\n0\n"), IoError);
  EXPECT_THROW(parse_pgm("P5\n2 2\n255\n\x01"), IoError);
}

TEST(Csv, ParsesRowsAndRejectsRagged) {
  const ImageGrid img = parse_csv_image("0,0.5\n1,0.25\n");
  EXPECT_EQ(img.width(), 2u);
  EXPECT_DOUBLE_EQ(img.at(1, 1), 0.25);
  EXPECT_THROW(parse_csv_image("0,1\n0\n"), IoError);
  EXPECT_THROW(parse_csv_image("a,b\n"), IoError);
  EXPECT_THROW(parse_csv_image(""), IoError);
}

TEST(Files, AtomicWriteAndLoadByExtension) {
  const fs::path dir = fs::temp_directory_path() / "equicaps-io-test";
  fs::create_directories(dir);
  write_file_atomic(dir / "img.csv", "0,1\n1,0\n");
  EXPECT_FALSE(fs::exists(dir / "img.csv.tmp"));
  EXPECT_DOUBLE_EQ(load_image(dir / "img.csv").at(0, 1), 1.0);
  write_file_atomic(dir / "img.txt", "0");
  EXPECT_THROW(load_image(dir / "img.txt"), IoError);
  EXPECT_THROW(read_file(dir / "missing.pgm"), IoError);
  fs::remove_all(dir);
}

TEST(Snapshot, RoundTripIsBitwise) {
  const TrainState st = TrainState::random(NetworkConfig::with_classes(3), 8);
  const std::string bytes = serialize_snapshot(st);
  const TrainState back = deserialize_snapshot(bytes);
  EXPECT_EQ(serialize_snapshot(back), bytes);
  EXPECT_EQ(back.config.classes, 3u);
  EXPECT_EQ(back.head_weight, st.head_weight);
  EXPECT_EQ(back.stages[1].sigma.beta, st.stages[1].sigma.beta);
  EXPECT_EQ(bytes.substr(0, 1), "{");
}

TEST(Snapshot, CorruptInputsAreRejected) {
  const std::string bytes = serialize_snapshot(TrainState::random(NetworkConfig{}, 1));
  EXPECT_THROW(deserialize_snapshot(bytes.substr(0, bytes.size() - 8)), IoError);
  EXPECT_THROW(deserialize_snapshot("not a snapshot"), IoError);
  std::string wrong = bytes;
  wrong.replace(wrong.find("equicaps-trainstate"), 8, "somethin");
  EXPECT_THROW(deserialize_snapshot(wrong), IoError);
}

TEST(Config, JsonRoundTrip) {
  NetworkConfig cfg = NetworkConfig::with_classes(5);
  cfg.learning_rate = 0.125;
  const NetworkConfig back = config_from_json(config_to_json(cfg));
  EXPECT_EQ(back.classes, 5u);
  EXPECT_EQ(back.stages.back().capsules, 5u);
  EXPECT_EQ(back.learning_rate, 0.125);
  EXPECT_THROW(config_from_json("{}"), IoError);
}
