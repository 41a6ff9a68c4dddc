#include <stdio.h>
#include <string.h>

#include "intermit_sim.h"

#define CHECK(x)                                                    \
    do {                                                            \
        if (!(x)) {                                                 \
            fprintf(stderr, "%s:%d: %s\n", __FILE__, __LINE__, #x); \
            return 1;                                               \
        }                                                           \
    } while (0)

int main(void) {
    ImsConfig *cfg = NULL;
    CHECK(ims_config_new(&cfg) == IMS_STATUS_OK);
    CHECK(ims_config_set_workload(cfg, IMS_WORKLOAD_BITCOUNT, 0) == IMS_STATUS_OK);
    CHECK(ims_config_set_strategy(cfg, IMS_STRATEGY_DICA) == IMS_STATUS_OK);
    CHECK(ims_config_set_budget(cfg, 100000) == IMS_STATUS_OK);
    CHECK(ims_config_set_block_size(cfg, 100) == IMS_STATUS_INVALID_ARGUMENT);
    CHECK(strstr(ims_last_error_message(), "100") != NULL);

    ImsResult r;
    CHECK(ims_simulate(cfg, &r) == IMS_STATUS_OK);
    CHECK(r.completed && r.output_matches_oracle);
    CHECK(r.power_cycles > 1);
    CHECK(r.total_cycles == r.app_cycles + r.checkpoint_cycles + r.restore_cycles);

    char *json = NULL;
    CHECK(ims_simulate_json(cfg, &json) == IMS_STATUS_OK);
    CHECK(strstr(json, "\"schema\": \"intermit-sim.report.v1\"") != NULL);
    ims_string_free(json);
    ims_config_free(cfg);

    ImsDTable *t = NULL;
    CHECK(ims_dtable_new(64, &t) == IMS_STATUS_OK);
    bool fresh = false;
    CHECK(ims_dtable_record_write(t, 0x3F80, &fresh) == IMS_STATUS_OK && fresh);
    size_t cleared = 0;
    CHECK(ims_dtable_stack_clean(t, 0x4000, &cleared) == IMS_STATUS_OK && cleared == 1);
    CHECK(ims_dtable_count(t) == 0);
    ims_dtable_free(t);

    printf("ok %llu power cycles\n", (unsigned long long)r.power_cycles);
    return 0;
}
