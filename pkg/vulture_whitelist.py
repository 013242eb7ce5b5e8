# Vulture whitelist: parameters required by protocol signatures
# that vulture incorrectly reports as unused.
#
# Run vulture with: poetry run vulture app/ vulture_whitelist.py --min-confidence 80

# NullProgressHandle implements ProgressHandle and ignores its arguments
text  # unused variable
value  # unused variable
