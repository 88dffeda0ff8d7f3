#include <stdio.h>
#include <string.h>
#include "irrmap.h"

int main(void) {
    const uint64_t counts[9] = {
        1788615, 184405, 104779,
        114903, 104929537, 1212801,
        194506, 5334847, 105872279,
    };
    IrrmapMetrics m;
    if (irrmap_class_metrics(counts, 3, 0, &m) != IRRMAP_STATUS_OK) {
        return 1;
    }
    printf("%.4f %.4f %.4f %.4f\n", m.precision, m.recall, m.f1, m.overall_accuracy);

    IrrmapModel *model = NULL;
    IrrmapStatus s = irrmap_model_load("/nonexistent/model.unp", &model);
    if (s != IRRMAP_STATUS_IO || model != NULL || irrmap_last_error() == NULL) {
        return 2;
    }
    if (irrmap_class_metrics(NULL, 3, 0, &m) != IRRMAP_STATUS_NULL_POINTER) {
        return 3;
    }
    printf("%s\n", irrmap_version());
    return 0;
}
