"""Label vocabularies and the triplet class table.

The triplet table follows the public CholecT45/CholecT50 label map (100
classes, ids 0..99), with component names hyphenated and ``clipper``
spelled ``clip-applier``.
"""

TOOLS = ("grasper", "bipolar", "hook", "scissors", "clip-applier", "irrigator")

ACTIONS = (
    "grasp", "retract", "dissect", "coagulate", "clip",
    "cut", "aspirate", "irrigate", "pack", "null-verb",
)

TARGETS = (
    "gallbladder", "cystic-plate", "cystic-duct", "cystic-artery",
    "cystic-pedicle", "blood-vessel", "fluid", "abdominal-wall-cavity",
    "liver", "adhesion", "omentum", "peritoneum", "gut", "specimen-bag",
    "null-target",
)

TRIPLET_CLASSES = (
    ("grasper", "dissect", "cystic-plate"),
    ("grasper", "dissect", "gallbladder"),
    ("grasper", "dissect", "omentum"),
    ("grasper", "grasp", "cystic-artery"),
    ("grasper", "grasp", "cystic-duct"),
    ("grasper", "grasp", "cystic-pedicle"),
    ("grasper", "grasp", "cystic-plate"),
    ("grasper", "grasp", "gallbladder"),
    ("grasper", "grasp", "gut"),
    ("grasper", "grasp", "liver"),
    ("grasper", "grasp", "omentum"),
    ("grasper", "grasp", "peritoneum"),
    ("grasper", "grasp", "specimen-bag"),
    ("grasper", "pack", "gallbladder"),
    ("grasper", "retract", "cystic-duct"),
    ("grasper", "retract", "cystic-pedicle"),
    ("grasper", "retract", "cystic-plate"),
    ("grasper", "retract", "gallbladder"),
    ("grasper", "retract", "gut"),
    ("grasper", "retract", "liver"),
    ("grasper", "retract", "omentum"),
    ("grasper", "retract", "peritoneum"),
    ("bipolar", "coagulate", "abdominal-wall-cavity"),
    ("bipolar", "coagulate", "blood-vessel"),
    ("bipolar", "coagulate", "cystic-artery"),
    ("bipolar", "coagulate", "cystic-duct"),
    ("bipolar", "coagulate", "cystic-pedicle"),
    ("bipolar", "coagulate", "cystic-plate"),
    ("bipolar", "coagulate", "gallbladder"),
    ("bipolar", "coagulate", "liver"),
    ("bipolar", "coagulate", "omentum"),
    ("bipolar", "coagulate", "peritoneum"),
    ("bipolar", "dissect", "adhesion"),
    ("bipolar", "dissect", "cystic-artery"),
    ("bipolar", "dissect", "cystic-duct"),
    ("bipolar", "dissect", "cystic-plate"),
    ("bipolar", "dissect", "gallbladder"),
    ("bipolar", "dissect", "omentum"),
    ("bipolar", "grasp", "cystic-plate"),
    ("bipolar", "grasp", "liver"),
    ("bipolar", "grasp", "specimen-bag"),
    ("bipolar", "retract", "cystic-duct"),
    ("bipolar", "retract", "cystic-pedicle"),
    ("bipolar", "retract", "gallbladder"),
    ("bipolar", "retract", "liver"),
    ("bipolar", "retract", "omentum"),
    ("hook", "coagulate", "blood-vessel"),
    ("hook", "coagulate", "cystic-artery"),
    ("hook", "coagulate", "cystic-duct"),
    ("hook", "coagulate", "cystic-pedicle"),
    ("hook", "coagulate", "cystic-plate"),
    ("hook", "coagulate", "gallbladder"),
    ("hook", "coagulate", "liver"),
    ("hook", "coagulate", "omentum"),
    ("hook", "cut", "blood-vessel"),
    ("hook", "cut", "peritoneum"),
    ("hook", "dissect", "blood-vessel"),
    ("hook", "dissect", "cystic-artery"),
    ("hook", "dissect", "cystic-duct"),
    ("hook", "dissect", "cystic-plate"),
    ("hook", "dissect", "gallbladder"),
    ("hook", "dissect", "omentum"),
    ("hook", "dissect", "peritoneum"),
    ("hook", "retract", "gallbladder"),
    ("hook", "retract", "liver"),
    ("scissors", "coagulate", "omentum"),
    ("scissors", "cut", "adhesion"),
    ("scissors", "cut", "blood-vessel"),
    ("scissors", "cut", "cystic-artery"),
    ("scissors", "cut", "cystic-duct"),
    ("scissors", "cut", "cystic-plate"),
    ("scissors", "cut", "liver"),
    ("scissors", "cut", "omentum"),
    ("scissors", "cut", "peritoneum"),
    ("scissors", "dissect", "cystic-plate"),
    ("scissors", "dissect", "gallbladder"),
    ("scissors", "dissect", "omentum"),
    ("clip-applier", "clip", "blood-vessel"),
    ("clip-applier", "clip", "cystic-artery"),
    ("clip-applier", "clip", "cystic-duct"),
    ("clip-applier", "clip", "cystic-pedicle"),
    ("clip-applier", "clip", "cystic-plate"),
    ("irrigator", "aspirate", "fluid"),
    ("irrigator", "dissect", "cystic-duct"),
    ("irrigator", "dissect", "cystic-pedicle"),
    ("irrigator", "dissect", "cystic-plate"),
    ("irrigator", "dissect", "gallbladder"),
    ("irrigator", "dissect", "omentum"),
    ("irrigator", "irrigate", "abdominal-wall-cavity"),
    ("irrigator", "irrigate", "cystic-pedicle"),
    ("irrigator", "irrigate", "liver"),
    ("irrigator", "retract", "gallbladder"),
    ("irrigator", "retract", "liver"),
    ("irrigator", "retract", "omentum"),
    ("grasper", "null-verb", "null-target"),
    ("bipolar", "null-verb", "null-target"),
    ("hook", "null-verb", "null-target"),
    ("scissors", "null-verb", "null-target"),
    ("clip-applier", "null-verb", "null-target"),
    ("irrigator", "null-verb", "null-target"),
)

CVS_CRITERIA = ("two-structures", "cystic-plate", "hepatocystic-triangle")
CVS_ACHIEVED = "CVS-achieved"

CLIP_DUCT = ("clip-applier", "clip", "cystic-duct")
CLIP_ARTERY = ("clip-applier", "clip", "cystic-artery")


def triplet_name(triplet):
    return ",".join(triplet)


TRIPLET_NAMES = tuple(triplet_name(t) for t in TRIPLET_CLASSES)

# Per-task label vocabularies; column index = position.
TRIPLET_LABELS = TOOLS + ACTIONS + TARGETS + TRIPLET_NAMES
CVS_LABELS = CVS_CRITERIA + (CVS_ACHIEVED,)
CLIPPING_LABELS = (
    "clip-applier", "clip", "cystic-duct", "cystic-artery",
    triplet_name(CLIP_DUCT), triplet_name(CLIP_ARTERY),
)
CLIPPING_PRIOR_LABELS = CLIPPING_LABELS + CVS_LABELS

TASK_LABELS = {
    "triplet": TRIPLET_LABELS,
    "cvs": CVS_LABELS,
    "clipping": CLIPPING_LABELS,
    "clipping_with_cvs_prior": CLIPPING_PRIOR_LABELS,
}

# Columns that score the clipping events themselves.
CLIPPING_EVENT_LABELS = (triplet_name(CLIP_DUCT), triplet_name(CLIP_ARTERY))
