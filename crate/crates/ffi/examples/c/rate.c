#include <stdio.h>

#include "semcom.h"

int main(void) {
    SemcomConfig *config = NULL;
    SemcomRate rate;
    char message[256];

    if (semcom_config_default(&config) != SEMCOM_STATUS_OK) {
        semcom_last_error(message, sizeof message);
        fprintf(stderr, "%s\n", message);
        return 1;
    }
    for (uint64_t den = 6; den <= 24; den *= 2) {
        SemcomStatus s = semcom_rate(config, 1, den, &rate);
        if (s != SEMCOM_STATUS_OK) {
            semcom_last_error(message, sizeof message);
            fprintf(stderr, "R=1/%llu: %s\n", (unsigned long long)den, message);
            semcom_config_free(config);
            return (int)s;
        }
        printf("R=1/%llu C=%zu k=%zu achieved=%.6f\n", (unsigned long long)den, rate.channels, rate.k, rate.achieved);
    }
    semcom_config_free(config);
    return 0;
}
