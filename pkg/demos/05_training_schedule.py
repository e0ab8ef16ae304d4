"""The four-phase quantization-aware training schedule, phase by phase.

    python3 demos/05_training_schedule.py
"""

from itertools import groupby

from cgraseg.schedule import lr_for_epoch, phase_for_epoch

epochs = range(240)
for phase, group in groupby(epochs, key=lambda e: phase_for_epoch(e).phase):
    group = list(group)
    st = phase_for_epoch(group[0])
    lrs = sorted({lr_for_epoch(e) for e in group}, reverse=True)
    print(f"phase {phase}: epochs {group[0]:>3}-{group[-1]:>3}  frozen decoder={st.frozen_decoder!s:<5} "
          f"aux={st.aux_supervision!s:<5} dropout={st.dropout!s:<5} aug={st.augmentation!s:<5} "
          f"lr {' -> '.join(f'{v:.0e}' for v in lrs)}")
