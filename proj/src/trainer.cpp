#include "povid/trainer.hpp"

#include "povid/errors.hpp"

namespace povid {

const char* stage_name(Stage stage) {
    switch (stage) {
        case Stage::Sft: return "sft";
        case Stage::Dpo: return "dpo";
        case Stage::Povid: return "povid";
    }
    return "sft";
}

Stage stage_from_name(const std::string& name) {
    if (name == "sft") return Stage::Sft;
    if (name == "dpo") return Stage::Dpo;
    if (name == "povid") return Stage::Povid;
    throw ConfigError("unknown stage: " + name);
}

}  // namespace povid
